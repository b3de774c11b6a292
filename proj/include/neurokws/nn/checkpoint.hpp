#pragma once

// Parameter checkpoints: <base>.bin holds the arrays back to back as
// little-endian values; <base>.json indexes them by name, shape, byte offset
// and dtype, next to a caller-supplied header.

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "neurokws/nn/tensor.hpp"

namespace nkws::nn {

template <class T>
constexpr const char* dtype_name() {
  if constexpr (std::is_same_v<T, float>) return "float32";
  else return "float64";
}

template <class T>
struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<T> values;
};

inline std::filesystem::path checkpoint_bin(const std::filesystem::path& base) {
  return std::filesystem::path(base.string() + ".bin");
}
inline std::filesystem::path checkpoint_index(const std::filesystem::path& base) {
  return std::filesystem::path(base.string() + ".json");
}

namespace detail {

template <class T>
void append_le(std::string& out, T v) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  const auto bits = std::bit_cast<U>(v);
  for (std::size_t b = 0; b < sizeof(T); ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
}

template <class T>
T read_le(const char* p) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  U bits = 0;
  for (std::size_t b = 0; b < sizeof(T); ++b)
    bits |= static_cast<U>(static_cast<unsigned char>(p[b])) << (8 * b);
  return std::bit_cast<T>(bits);
}

}  // namespace detail

template <class T>
void save_checkpoint(const std::filesystem::path& base, const std::vector<NamedArray<T>>& arrays,
                     const nlohmann::json& header) {
  if (base.has_parent_path()) std::filesystem::create_directories(base.parent_path());
  std::string blob;
  nlohmann::json index = header;
  auto& list = index["arrays"];
  list = nlohmann::json::array();
  for (const auto& a : arrays) {
    if (a.values.size() != numel(a.shape))
      throw DimensionError("checkpoint array " + a.name + " does not match its shape");
    list.push_back({{"name", a.name}, {"shape", a.shape}, {"offset", blob.size()},
                    {"dtype", dtype_name<T>()}});
    for (T v : a.values) detail::append_le(blob, v);
  }
  index["total_bytes"] = blob.size();
  std::ofstream bin(checkpoint_bin(base), std::ios::binary);
  bin.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  std::ofstream js(checkpoint_index(base));
  js << index.dump(2) << "\n";
  if (!bin || !js) throw CheckpointError("cannot write checkpoint " + base.string());
}

template <class T>
struct LoadedCheckpoint {
  nlohmann::json header;
  std::map<std::string, NamedArray<T>> arrays;
};

template <class T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& base) {
  std::ifstream js(checkpoint_index(base));
  std::ifstream bin(checkpoint_bin(base), std::ios::binary);
  if (!js || !bin) throw CheckpointError("missing checkpoint " + base.string());
  LoadedCheckpoint<T> out;
  out.header = nlohmann::json::parse(js);
  const std::string blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
  for (const auto& entry : out.header.at("arrays")) {
    NamedArray<T> a;
    a.name = entry.at("name").template get<std::string>();
    a.shape = entry.at("shape").template get<Shape>();
    const auto offset = entry.at("offset").template get<std::size_t>();
    const auto dtype = entry.at("dtype").template get<std::string>();
    const std::size_t n = numel(a.shape);
    a.values.resize(n);
    if (dtype == "float32") {
      if (offset + 4 * n > blob.size()) throw CheckpointError("truncated array " + a.name);
      for (std::size_t i = 0; i < n; ++i)
        a.values[i] = static_cast<T>(detail::read_le<float>(blob.data() + offset + 4 * i));
    } else if (dtype == "float64") {
      if (offset + 8 * n > blob.size()) throw CheckpointError("truncated array " + a.name);
      for (std::size_t i = 0; i < n; ++i)
        a.values[i] = static_cast<T>(detail::read_le<double>(blob.data() + offset + 8 * i));
    } else {
      throw CheckpointError("unknown dtype " + dtype + " for " + a.name);
    }
    out.arrays.emplace(a.name, std::move(a));
  }
  return out;
}

}  // namespace nkws::nn
