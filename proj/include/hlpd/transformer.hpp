#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "hlpd/lm.hpp"

namespace hlpd {

struct TransformerConfig {
  int vocab = kVocabSize;
  int layers = 2;
  int width = 64;
  int heads = 2;
  int context = 128;
  int mlp_ratio = 4;
  double init_std = 0.02;

  friend bool operator==(const TransformerConfig&, const TransformerConfig&) = default;

  void validate() const {
    if (vocab < 1 || layers < 1 || width < 1 || heads < 1 || context < 2 || mlp_ratio < 1) {
      throw InvalidConfig("transformer dimensions must be positive");
    }
    if (width % heads != 0) throw InvalidConfig("width must be divisible by heads");
  }
};

// Decoder-only pre-LayerNorm transformer with learned positional embeddings,
// GELU MLPs and an untied output head. Parameters live in one flat buffer;
// backward is written out by hand.
class TransformerLm final : public TrainableModel {
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;
  using ConstMap = Eigen::Map<const Mat>;
  using MutMap = Eigen::Map<Mat>;

 public:
  TransformerLm(TransformerConfig config, std::uint64_t seed) : config_(config) {
    layout();
    Rng rng(seed);
    for (const auto& t : tensors_) {
      const std::string leaf = t.name.substr(t.name.find('.') + 1);
      const bool is_gain = leaf.ends_with("_g");
      const bool is_bias = leaf.ends_with("_b") || leaf.starts_with("b_");
      for (std::size_t i = 0; i < t.size(); ++i) {
        double& p = params_[t.offset + i];
        if (is_gain) p = 1.0;
        else if (is_bias) p = 0.0;
        else p = config_.init_std * rng.normal();
      }
    }
  }

  TransformerLm(TransformerConfig config, std::vector<double> params) : config_(config) {
    layout();
    if (params.size() != params_.size()) throw CheckpointError("parameter count does not match descriptor");
    params_ = std::move(params);
  }

  static std::size_t parameter_count(const TransformerConfig& config) {
    TransformerLm probe(config);
    return probe.params_.size();
  }

  const TransformerConfig& config() const noexcept { return config_; }

  std::string kind() const override { return "transformer"; }
  int vocab_size() const override { return config_.vocab; }
  int context_window() const override { return config_.context; }
  std::unique_ptr<LanguageModel> clone() const override { return std::make_unique<TransformerLm>(*this); }

  std::span<double> parameters() override { return params_; }
  std::span<const double> parameters() const override { return params_; }
  const std::vector<TensorInfo>& tensors() const override { return tensors_; }

  LogProbTable log_prob_table(const Sequence& x) const override {
    Cache cache;
    forward(x, cache);
    LogProbTable table(static_cast<std::size_t>(cache.logp.rows()), static_cast<std::size_t>(config_.vocab));
    std::copy(cache.logp.data(), cache.logp.data() + cache.logp.size(), table.data().begin());
    return table;
  }

  double accumulate_gradient(const Sequence& x, double weight, std::span<double> grad) const override {
    Cache cache;
    forward(x, cache);
    const long steps = cache.logp.rows();
    double total = 0.0;
    // d(weight * sum_i logp[i, y_i]) / d logits = weight * (onehot - softmax)
    Mat dlogits = -cache.logp.array().exp().matrix() * weight;
    for (long i = 0; i < steps; ++i) {
      const int y = x[static_cast<std::size_t>(i) + 1];
      total += cache.logp(i, y);
      dlogits(i, y) += weight;
    }
    backward(x, cache, dlogits, grad);
    return total;
  }

 private:
  struct LayerSlots {
    std::size_t ln1_g, ln1_b, w_qkv, b_qkv, w_o, b_o, ln2_g, ln2_b, w_1, b_1, w_2, b_2;
  };

  struct NormCache {
    Mat xhat;
    Eigen::VectorXd rstd;
  };

  struct LayerCache {
    NormCache ln1;
    Mat a;    // LN1 output
    Mat qkv;
    std::vector<Mat> probs;  // per head attention weights
    Mat att;  // concatenated head outputs
    NormCache ln2;
    Mat m;    // LN2 output
    Mat pre;  // MLP pre-activation
    Mat act;  // GELU output
  };

  struct Cache {
    std::vector<LayerCache> layers;
    NormCache lnf;
    Mat xf;
    Mat logp;
  };

  // Layout-only constructor.
  explicit TransformerLm(TransformerConfig config) : config_(config) { layout(); }

  void layout() {
    config_.validate();
    const auto d = static_cast<std::size_t>(config_.width);
    const auto f = d * static_cast<std::size_t>(config_.mlp_ratio);
    const auto v = static_cast<std::size_t>(config_.vocab);
    std::size_t offset = 0;
    auto add = [&](std::string name, std::size_t rows, std::size_t cols) {
      tensors_.push_back({std::move(name), rows, cols, offset});
      offset += rows * cols;
      return tensors_.size() - 1;
    };
    tok_emb_ = add("tok_emb", v, d);
    pos_emb_ = add("pos_emb", static_cast<std::size_t>(config_.context), d);
    for (int l = 0; l < config_.layers; ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      LayerSlots s{};
      s.ln1_g = add(p + "ln1_g", 1, d);
      s.ln1_b = add(p + "ln1_b", 1, d);
      s.w_qkv = add(p + "w_qkv", d, 3 * d);
      s.b_qkv = add(p + "b_qkv", 1, 3 * d);
      s.w_o = add(p + "w_o", d, d);
      s.b_o = add(p + "b_o", 1, d);
      s.ln2_g = add(p + "ln2_g", 1, d);
      s.ln2_b = add(p + "ln2_b", 1, d);
      s.w_1 = add(p + "w_1", d, f);
      s.b_1 = add(p + "b_1", 1, f);
      s.w_2 = add(p + "w_2", f, d);
      s.b_2 = add(p + "b_2", 1, d);
      layers_.push_back(s);
    }
    lnf_g_ = add("lnf_g", 1, d);
    lnf_b_ = add("lnf_b", 1, d);
    w_out_ = add("w_out", d, v);
    b_out_ = add("b_out", 1, v);
    params_.assign(offset, 0.0);
  }

  ConstMap view(std::size_t slot) const {
    const auto& t = tensors_[slot];
    return ConstMap(params_.data() + t.offset, static_cast<long>(t.rows), static_cast<long>(t.cols));
  }

  MutMap grad_view(std::span<double> grad, std::size_t slot) const {
    const auto& t = tensors_[slot];
    return MutMap(grad.data() + t.offset, static_cast<long>(t.rows), static_cast<long>(t.cols));
  }

  static constexpr double kNormEps = 1e-5;
  static constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

  static Mat layer_norm(const Mat& x, const ConstMap& g, const ConstMap& b, NormCache& cache) {
    const long n = x.rows();
    const double width = static_cast<double>(x.cols());
    cache.xhat.resize(n, x.cols());
    cache.rstd.resize(n);
    for (long i = 0; i < n; ++i) {
      const double mean = x.row(i).sum() / width;
      const double var = (x.row(i).array() - mean).square().sum() / width;
      cache.rstd(i) = 1.0 / std::sqrt(var + kNormEps);
      cache.xhat.row(i) = (x.row(i).array() - mean) * cache.rstd(i);
    }
    Mat y = cache.xhat.array().rowwise() * g.row(0).array();
    y.rowwise() += b.row(0);
    return y;
  }

  static Mat layer_norm_backward(const Mat& dy, const ConstMap& g, const NormCache& cache, MutMap dg, MutMap db) {
    dg.row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
    db.row(0) += dy.colwise().sum();
    const Mat dxhat = dy.array().rowwise() * g.row(0).array();
    const double width = static_cast<double>(dy.cols());
    Mat dx(dy.rows(), dy.cols());
    for (long i = 0; i < dy.rows(); ++i) {
      const double mean_d = dxhat.row(i).sum() / width;
      const double mean_dx = dxhat.row(i).dot(cache.xhat.row(i)) / width;
      dx.row(i) = (dxhat.row(i).array() - mean_d - cache.xhat.row(i).array() * mean_dx) * cache.rstd(i);
    }
    return dx;
  }

  void forward(const Sequence& x, Cache& cache) const {
    const long steps = static_cast<long>(x.size()) - 1;
    const long d = config_.width;
    const long dh = d / config_.heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const ConstMap tok = view(tok_emb_);
    const ConstMap pos = view(pos_emb_);

    Mat h(steps, d);
    for (long i = 0; i < steps; ++i) h.row(i) = tok.row(x[static_cast<std::size_t>(i)]) + pos.row(i);

    cache.layers.resize(layers_.size());
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const LayerSlots& s = layers_[l];
      LayerCache& c = cache.layers[l];
      c.a = layer_norm(h, view(s.ln1_g), view(s.ln1_b), c.ln1);
      c.qkv = c.a * view(s.w_qkv);
      c.qkv.rowwise() += view(s.b_qkv).row(0);
      c.att.resize(steps, d);
      c.probs.resize(static_cast<std::size_t>(config_.heads));
      for (long hd = 0; hd < config_.heads; ++hd) {
        const auto q = c.qkv.middleCols(hd * dh, dh);
        const auto k = c.qkv.middleCols(d + hd * dh, dh);
        const auto v = c.qkv.middleCols(2 * d + hd * dh, dh);
        Mat& p = c.probs[static_cast<std::size_t>(hd)];
        p = (q * k.transpose()) * scale;
        for (long i = 0; i < steps; ++i) {
          const double hi = p.row(i).head(i + 1).maxCoeff();
          double z = 0.0;
          for (long j = 0; j <= i; ++j) {
            p(i, j) = std::exp(p(i, j) - hi);
            z += p(i, j);
          }
          p.row(i).head(i + 1) /= z;
          p.row(i).tail(steps - i - 1).setZero();
        }
        c.att.middleCols(hd * dh, dh) = p * v;
      }
      h.noalias() += c.att * view(s.w_o);
      h.rowwise() += view(s.b_o).row(0);

      c.m = layer_norm(h, view(s.ln2_g), view(s.ln2_b), c.ln2);
      c.pre = c.m * view(s.w_1);
      c.pre.rowwise() += view(s.b_1).row(0);
      const auto u = c.pre.array();
      c.act = (0.5 * u * (1.0 + (kGeluC * (u + 0.044715 * u.cube())).tanh())).matrix();
      h.noalias() += c.act * view(s.w_2);
      h.rowwise() += view(s.b_2).row(0);
    }

    cache.xf = layer_norm(h, view(lnf_g_), view(lnf_b_), cache.lnf);
    cache.logp = cache.xf * view(w_out_);
    cache.logp.rowwise() += view(b_out_).row(0);
    for (long i = 0; i < steps; ++i) {
      const double hi = cache.logp.row(i).maxCoeff();
      const double lse = hi + std::log((cache.logp.row(i).array() - hi).exp().sum());
      cache.logp.row(i).array() -= lse;
    }
  }

  void backward(const Sequence& x, const Cache& cache, const Mat& dlogits, std::span<double> grad) const {
    const long steps = dlogits.rows();
    const long d = config_.width;
    const long dh = d / config_.heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    grad_view(grad, w_out_).noalias() += cache.xf.transpose() * dlogits;
    grad_view(grad, b_out_).row(0) += dlogits.colwise().sum();
    Mat dxf = dlogits * view(w_out_).transpose();
    Mat dh_res = layer_norm_backward(dxf, view(lnf_g_), cache.lnf, grad_view(grad, lnf_g_), grad_view(grad, lnf_b_));

    for (std::size_t li = layers_.size(); li-- > 0;) {
      const LayerSlots& s = layers_[li];
      const LayerCache& c = cache.layers[li];

      // MLP block
      grad_view(grad, s.w_2).noalias() += c.act.transpose() * dh_res;
      grad_view(grad, s.b_2).row(0) += dh_res.colwise().sum();
      Mat dpre = dh_res * view(s.w_2).transpose();
      {
        const auto u = c.pre.array();
        const Mat t = (kGeluC * (u + 0.044715 * u.cube())).tanh().matrix();
        const auto ta = t.array();
        dpre.array() *= 0.5 * (1.0 + ta) + 0.5 * u * (1.0 - ta.square()) * kGeluC * (1.0 + 3.0 * 0.044715 * u.square());
      }
      grad_view(grad, s.w_1).noalias() += c.m.transpose() * dpre;
      grad_view(grad, s.b_1).row(0) += dpre.colwise().sum();
      const Mat dm = dpre * view(s.w_1).transpose();
      dh_res += layer_norm_backward(dm, view(s.ln2_g), c.ln2, grad_view(grad, s.ln2_g), grad_view(grad, s.ln2_b));

      // Attention block
      grad_view(grad, s.w_o).noalias() += c.att.transpose() * dh_res;
      grad_view(grad, s.b_o).row(0) += dh_res.colwise().sum();
      const Mat datt = dh_res * view(s.w_o).transpose();
      Mat dqkv(steps, 3 * d);
      for (long hd = 0; hd < config_.heads; ++hd) {
        const auto q = c.qkv.middleCols(hd * dh, dh);
        const auto k = c.qkv.middleCols(d + hd * dh, dh);
        const auto v = c.qkv.middleCols(2 * d + hd * dh, dh);
        const Mat& p = c.probs[static_cast<std::size_t>(hd)];
        const auto dout = datt.middleCols(hd * dh, dh);
        const Mat dp = dout * v.transpose();
        dqkv.middleCols(2 * d + hd * dh, dh) = p.transpose() * dout;
        Mat ds = p.array() * (dp.array().colwise() - (dp.array() * p.array()).rowwise().sum());
        ds *= scale;
        dqkv.middleCols(hd * dh, dh) = ds * k;
        dqkv.middleCols(d + hd * dh, dh) = ds.transpose() * q;
      }
      grad_view(grad, s.w_qkv).noalias() += c.a.transpose() * dqkv;
      grad_view(grad, s.b_qkv).row(0) += dqkv.colwise().sum();
      const Mat da = dqkv * view(s.w_qkv).transpose();
      dh_res += layer_norm_backward(da, view(s.ln1_g), c.ln1, grad_view(grad, s.ln1_g), grad_view(grad, s.ln1_b));
    }

    MutMap dtok = grad_view(grad, tok_emb_);
    MutMap dpos = grad_view(grad, pos_emb_);
    for (long i = 0; i < steps; ++i) {
      dtok.row(x[static_cast<std::size_t>(i)]) += dh_res.row(i);
      dpos.row(i) += dh_res.row(i);
    }
  }

  TransformerConfig config_;
  std::vector<TensorInfo> tensors_;
  std::vector<LayerSlots> layers_;
  std::size_t tok_emb_ = 0, pos_emb_ = 0, lnf_g_ = 0, lnf_b_ = 0, w_out_ = 0, b_out_ = 0;
  std::vector<double> params_;
};

}  // namespace hlpd
