#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "hlpd/error.hpp"
#include "json.hpp"

namespace hlpd {

// Serialized with invalid UTF-8 replaced rather than thrown on.
inline std::string dump_json(const nlohmann::json& j, int indent = -1) {
  return j.dump(indent, ' ', false, nlohmann::json::error_handler_t::replace);
}

// Line-delimited JSON with a {"schema", "version"} header line. Readers
// accept any minor version of the same major.
struct JsonlSchema {
  std::string name;
  std::string version;
};

inline void write_jsonl(const std::filesystem::path& path, const JsonlSchema& schema,
                        const std::vector<nlohmann::json>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << dump_json({{"schema", schema.name}, {"version", schema.version}}) << '\n';
  for (const auto& r : records) out << dump_json(r) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

namespace detail {

inline std::string major_of(const std::string& version) { return version.substr(0, version.find('.')); }

}  // namespace detail

inline std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path, const JsonlSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<nlohmann::json> out;
  std::string line;
  std::size_t number = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw MalformedLine(number, e.what());
    }
    if (!header_seen) {
      if (!j.is_object() || !j.contains("schema") || !j.contains("version")) {
        throw SchemaMismatch(path.string() + ": missing schema header");
      }
      const auto name = j["schema"].get<std::string>();
      const auto version = j["version"].get<std::string>();
      if (name != schema.name) throw SchemaMismatch("expected schema " + schema.name + ", found " + name);
      if (detail::major_of(version) != detail::major_of(schema.version)) {
        throw SchemaMismatch("unsupported " + name + " version " + version);
      }
      header_seen = true;
      continue;
    }
    if (!j.is_object()) throw MalformedLine(number, "record is not a JSON object");
    j["__line"] = number;
    out.push_back(std::move(j));
  }
  if (!header_seen) throw SchemaMismatch(path.string() + ": empty file");
  return out;
}

// Decodes each record, reporting conversion failures against their line.
template <class T>
std::vector<T> decode_jsonl(const std::vector<nlohmann::json>& rows, const std::function<T(const nlohmann::json&)>& f) {
  std::vector<T> out;
  out.reserve(rows.size());
  for (const auto& row : rows) {
    try {
      out.push_back(f(row));
    } catch (const nlohmann::json::exception& e) {
      throw MalformedLine(row.value("__line", std::size_t{0}), e.what());
    }
  }
  return out;
}

}  // namespace hlpd
