#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "hlpd/ngram.hpp"
#include "hlpd/transformer.hpp"
#include "json.hpp"

namespace hlpd {

// Checkpoint container:
//   8 bytes   magic "HLPDCKPT"
//   u32 LE    container version
//   u64 LE    header length, then that many bytes of JSON header
//   u64 LE    tensor value count, then IEEE-754 doubles (LE)
// The JSON header carries the backend kind, its descriptor, tensor names and
// shapes, and the seed lineage of the run that produced it.
inline constexpr char kCheckpointMagic[8] = {'H', 'L', 'P', 'D', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

struct Checkpoint {
  std::shared_ptr<LanguageModel> model;
  nlohmann::json lineage;
};

inline nlohmann::json transformer_descriptor(const TransformerConfig& c) {
  return {{"vocab", c.vocab},   {"layers", c.layers},   {"width", c.width},       {"heads", c.heads},
          {"context", c.context}, {"mlp_ratio", c.mlp_ratio}, {"init_std", c.init_std}};
}

inline TransformerConfig transformer_config_from(const nlohmann::json& j) {
  TransformerConfig c;
  c.vocab = j.at("vocab").get<int>();
  c.layers = j.at("layers").get<int>();
  c.width = j.at("width").get<int>();
  c.heads = j.at("heads").get<int>();
  c.context = j.at("context").get<int>();
  c.mlp_ratio = j.at("mlp_ratio").get<int>();
  c.init_std = j.at("init_std").get<double>();
  return c;
}

namespace detail {

template <class T>
void write_pod(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T read_pod(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw CheckpointError("truncated checkpoint");
  return value;
}

}  // namespace detail

inline void save_checkpoint(const LanguageModel& model, const std::filesystem::path& path,
                            const nlohmann::json& lineage = nlohmann::json::object()) {
  nlohmann::json header{{"format", "hlpd-checkpoint"}, {"version", kCheckpointVersion}, {"kind", model.kind()},
                        {"lineage", lineage}};
  std::vector<double> values;
  if (const auto* t = dynamic_cast<const TransformerLm*>(&model)) {
    header["descriptor"] = transformer_descriptor(t->config());
    nlohmann::json shapes = nlohmann::json::array();
    for (const auto& info : t->tensors()) shapes.push_back({{"name", info.name}, {"rows", info.rows}, {"cols", info.cols}});
    header["tensors"] = shapes;
    values.assign(t->parameters().begin(), t->parameters().end());
  } else if (const auto* n = dynamic_cast<const NgramLm*>(&model)) {
    const auto& c = n->config();
    header["descriptor"] = {{"order", c.order}, {"concentration", c.concentration}, {"vocab", c.vocab}, {"context", c.context}};
    nlohmann::json counts = nlohmann::json::array();
    for (const auto& [context, cell] : n->table()) {
      nlohmann::json entries = nlohmann::json::array();
      for (std::size_t v = 0; v < cell.counts.size(); ++v) {
        if (cell.counts[v] != 0) entries.push_back({v, cell.counts[v]});
      }
      counts.push_back({{"context", context}, {"counts", entries}});
    }
    header["counts"] = counts;
  } else if (dynamic_cast<const UniformLm*>(&model) != nullptr) {
    header["descriptor"] = {{"vocab", model.vocab_size()}, {"context", model.context_window()}};
  } else {
    throw CheckpointError("backend '" + model.kind() + "' is not serializable");
  }

  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::write_pod<std::uint32_t>(out, kCheckpointVersion);
  detail::write_pod<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  detail::write_pod<std::uint64_t>(out, values.size());
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[sizeof kCheckpointMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
    throw CheckpointError(path.string() + " is not a checkpoint");
  }
  const auto version = detail::read_pod<std::uint32_t>(in);
  if (version != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const auto header_len = detail::read_pod<std::uint64_t>(in);
  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw CheckpointError("truncated checkpoint header");
  const auto header = nlohmann::json::parse(text);
  const auto count = detail::read_pod<std::uint64_t>(in);
  std::vector<double> values(count);
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(count * sizeof(double)));
  if (!in) throw CheckpointError("truncated checkpoint tensors");

  Checkpoint out;
  out.lineage = header.value("lineage", nlohmann::json::object());
  const std::string kind = header.at("kind").get<std::string>();
  const auto& desc = header.at("descriptor");
  if (kind == "transformer") {
    out.model = std::make_shared<TransformerLm>(transformer_config_from(desc), std::move(values));
  } else if (kind == "ngram") {
    NgramLm::Config c;
    c.order = desc.at("order").get<int>();
    c.concentration = desc.at("concentration").get<double>();
    c.vocab = desc.at("vocab").get<int>();
    c.context = desc.at("context").get<int>();
    auto model = std::make_shared<NgramLm>(c);
    for (const auto& entry : header.at("counts")) {
      const auto context = entry.at("context").get<std::vector<Token>>();
      for (const auto& pair : entry.at("counts")) {
        model->set_count(context, pair.at(0).get<Token>(), pair.at(1).get<std::uint32_t>());
      }
    }
    out.model = std::move(model);
  } else if (kind == "uniform") {
    out.model = std::make_shared<UniformLm>(desc.at("vocab").get<int>(), desc.at("context").get<int>());
  } else {
    throw CheckpointError("unknown checkpoint kind '" + kind + "'");
  }
  return out;
}

}  // namespace hlpd
