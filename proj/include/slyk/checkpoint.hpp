#pragma once

// Checkpoints in the safetensors layout: u64 little-endian header length, a
// JSON header (dtype, shape, data_offsets per tensor plus a string-valued
// "__metadata__" map), then the raw little-endian tensor bytes.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <map>
#include <string>
#include <vector>

#include "slyk/errors.hpp"
#include "slyk/layers.hpp"

namespace slyk::ckpt {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

struct TensorRecord {
  std::string name;
  std::string dtype;  // F32 | F64
  nn::Shape shape;
  std::vector<unsigned char> bytes;

  template <class T>
  nn::Tensor<T> as() const {
    nn::Tensor<T> t(shape);
    if (dtype == "F32") {
      std::vector<float> v(t.size());
      std::memcpy(v.data(), bytes.data(), bytes.size());
      for (std::size_t i = 0; i < v.size(); ++i) t[i] = static_cast<T>(v[i]);
    } else {
      std::vector<double> v(t.size());
      std::memcpy(v.data(), bytes.data(), bytes.size());
      for (std::size_t i = 0; i < v.size(); ++i) t[i] = static_cast<T>(v[i]);
    }
    return t;
  }
};

template <class T>
constexpr const char* dtype_name() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? "F32" : "F64";
}

struct Checkpoint {
  std::map<std::string, std::string> metadata;
  std::vector<TensorRecord> tensors;

  const TensorRecord* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }

  template <class T>
  void add(const std::string& name, const nn::Tensor<T>& t) {
    TensorRecord r{name, dtype_name<T>(), t.shape(), {}};
    r.bytes.resize(t.size() * sizeof(T));
    std::memcpy(r.bytes.data(), t.data(), r.bytes.size());
    tensors.push_back(std::move(r));
  }

  /// Every parameter and buffer of `m`, named `prefix.<state name>`.
  template <class T>
  void add_module(nn::Module<T>& m, const std::string& prefix) {
    for (const auto& s : nn::state_tensors(m, prefix)) add(s.name, *s.tensor);
  }
};

inline void save(const fs::path& path, const Checkpoint& c) {
  json header = json::object();
  json meta = json::object();
  for (const auto& [k, v] : c.metadata) meta[k] = v;
  header["__metadata__"] = meta;
  std::size_t offset = 0;
  for (const auto& t : c.tensors) {
    header[t.name] = {{"dtype", t.dtype}, {"shape", t.shape}, {"data_offsets", {offset, offset + t.bytes.size()}}};
    offset += t.bytes.size();
  }
  std::string h = header.dump();
  while (h.size() % 8 != 0) h += ' ';
  if (!path.parent_path().empty()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(path.string() + ": cannot open for writing");
    const std::uint64_t n = h.size();
    out.write(reinterpret_cast<const char*>(&n), sizeof n);
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    for (const auto& t : c.tensors)
      out.write(reinterpret_cast<const char*>(t.bytes.data()), static_cast<std::streamsize>(t.bytes.size()));
    if (!out) throw IoError(path.string() + ": write failed");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError(path.string() + ": " + ec.message());
}

inline Checkpoint load(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string() + ": cannot open checkpoint");
  std::uint64_t n = 0;
  in.read(reinterpret_cast<char*>(&n), sizeof n);
  if (!in || n == 0 || n > (1u << 30)) throw DataError(path.string() + ": not a checkpoint (bad header length)");
  std::string h(n, '\0');
  in.read(h.data(), static_cast<std::streamsize>(n));
  if (!in) throw DataError(path.string() + ": truncated header");
  json header;
  try {
    header = json::parse(h);
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + ": bad header: " + e.what());
  }
  const std::vector<char> body((std::istreambuf_iterator<char>(in)), {});
  Checkpoint c;
  for (const auto& [k, v] : header.items()) {
    if (k == "__metadata__") {
      for (const auto& [mk, mv] : v.items()) c.metadata[mk] = mv.get<std::string>();
      continue;
    }
    TensorRecord t;
    t.name = k;
    t.dtype = v.at("dtype").get<std::string>();
    if (t.dtype != "F32" && t.dtype != "F64") throw DataError(path.string() + ": unsupported dtype " + t.dtype);
    t.shape = v.at("shape").get<nn::Shape>();
    const auto begin = v.at("data_offsets")[0].get<std::size_t>(), end = v.at("data_offsets")[1].get<std::size_t>();
    const std::size_t width = t.dtype == "F32" ? 4 : 8;
    if (end < begin || end > body.size() || end - begin != nn::numel(t.shape) * width)
      throw DataError(path.string() + ": bad data offsets for " + k);
    t.bytes.assign(body.begin() + static_cast<std::ptrdiff_t>(begin), body.begin() + static_cast<std::ptrdiff_t>(end));
    c.tensors.push_back(std::move(t));
  }
  return c;
}

/// Copies `prefix.<name>` tensors into `m`. Missing tensors or shape
/// mismatches are collected and reported together.
template <class T>
void load_module(const Checkpoint& c, nn::Module<T>& m, const std::string& prefix) {
  std::vector<std::string> problems;
  for (auto& s : nn::state_tensors(m, prefix)) {
    const auto* t = c.find(s.name);
    if (!t) {
      problems.push_back("checkpoint has no tensor '" + s.name + "'");
    } else if (t->shape != s.tensor->shape()) {
      problems.push_back("'" + s.name + "': checkpoint shape " + nn::to_string(t->shape) + " vs model shape " +
                         nn::to_string(s.tensor->shape()));
    }
  }
  if (!problems.empty()) throw ConfigError(problems);
  for (auto& s : nn::state_tensors(m, prefix)) *s.tensor = c.find(s.name)->template as<T>();
}

}  // namespace slyk::ckpt
