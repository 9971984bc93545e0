#pragma once

// Checkpoint directories. A network checkpoint holds
//   spec.json      the NetworkSpec
//   manifest.json  one entry per array: name, file, shape, dtype, byte order
//   <file>.bin     raw little-endian array data
// Parameters and buffers (running moments, spectral-norm vectors) share the
// manifest; loading checks every shape against the freshly planned network.

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <type_traits>

#include <json.hpp>

#include "firegan/errors.hpp"
#include "firegan/model.hpp"

namespace firegan::checkpoint {

namespace fs = std::filesystem;
using json = nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are written in host order, which must be little-endian");

template <typename T>
constexpr const char* dtype_name() {
  if constexpr (std::is_same_v<T, float>) return "f32";
  else return "f64";
}

inline json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

inline void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

inline std::string blob_file(const std::string& name) {
  std::string f = name;
  for (auto& ch : f)
    if (ch == '/' || ch == '\\') ch = '_';
  return f + ".bin";
}

// Named tensor collection <-> manifest.json plus blobs in `dir`.
template <typename T>
void save_tensors(const fs::path& dir, const std::vector<std::pair<std::string, const Tensor<T>*>>& items) {
  fs::create_directories(dir);
  json manifest = json::array();
  for (const auto& [name, t] : items) {
    const std::string file = blob_file(name);
    std::ofstream out(dir / file, std::ios::binary);
    if (!out) throw IoError("cannot write " + (dir / file).string());
    out.write(reinterpret_cast<const char*>(t->data()),
              static_cast<std::streamsize>(t->size() * sizeof(T)));
    if (!out) throw IoError("write failed: " + (dir / file).string());
    manifest.push_back({{"name", name},
                        {"file", file},
                        {"shape", t->shape()},
                        {"dtype", dtype_name<T>()},
                        {"byte_order", "little"}});
  }
  write_json(dir / "manifest.json", manifest);
}

template <typename T>
std::map<std::string, Tensor<T>> load_tensors(const fs::path& dir) {
  const json manifest = read_json(dir / "manifest.json");
  if (!manifest.is_array()) throw DataError((dir / "manifest.json").string() + ": expected an array");
  std::map<std::string, Tensor<T>> out;
  for (const auto& e : manifest) {
    const auto name = e.at("name").get<std::string>();
    const auto shape = e.at("shape").get<Shape>();
    const auto dtype = e.at("dtype").get<std::string>();
    if (e.value("byte_order", "little") != "little")
      throw DataError("blob '" + name + "': unsupported byte order");
    const fs::path file = dir / e.at("file").get<std::string>();
    std::ifstream in(file, std::ios::binary);
    if (!in) throw IoError("missing blob " + file.string());
    Tensor<T> t(shape);
    if (dtype == "f32") {
      std::vector<float> raw(t.size());
      in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size() * 4));
      if (!in) throw DataError("blob " + file.string() + " is shorter than its shape");
      for (std::size_t i = 0; i < raw.size(); ++i) t[i] = static_cast<T>(raw[i]);
    } else if (dtype == "f64") {
      std::vector<double> raw(t.size());
      in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size() * 8));
      if (!in) throw DataError("blob " + file.string() + " is shorter than its shape");
      for (std::size_t i = 0; i < raw.size(); ++i) t[i] = static_cast<T>(raw[i]);
    } else {
      throw DataError("blob '" + name + "': unknown dtype " + dtype);
    }
    in.peek();
    if (!in.eof()) throw DataError("blob " + file.string() + " is longer than its shape");
    out.emplace(name, std::move(t));
  }
  return out;
}

inline json spec_to_json(const NetworkSpec& s) {
  return {{"kind", kind_name(s.kind)},
          {"depth", s.depth},
          {"base_filters", s.base_filters},
          {"kernel_size", s.kernel_size},
          {"use_spectral_norm", s.use_spectral_norm},
          {"output_channels", s.output_channels}};
}

inline NetworkSpec spec_from_json(const json& j) {
  NetworkSpec s;
  try {
    s.kind = parse_kind(j.at("kind").get<std::string>());
    s.depth = j.at("depth").get<int>();
    s.base_filters = j.at("base_filters").get<int>();
    s.kernel_size = j.at("kernel_size").get<int>();
    s.use_spectral_norm = j.at("use_spectral_norm").get<bool>();
    s.output_channels = j.at("output_channels").get<int>();
  } catch (const json::exception& e) {
    throw DataError(std::string("network spec: ") + e.what());
  }
  s.validate();
  return s;
}

template <typename T>
void save_network(const fs::path& dir, Network<T>& net) {
  fs::create_directories(dir);
  write_json(dir / "spec.json", spec_to_json(net.spec()));
  std::vector<std::pair<std::string, const Tensor<T>*>> items;
  for (const auto& [name, v] : net.named_parameters()) items.emplace_back(name, &v.value());
  for (const auto& [name, t] : net.named_buffers()) items.emplace_back(name, t);
  save_tensors<T>(dir, items);
}

// Copies stored arrays into an existing network of the same spec.
template <typename T>
void load_into(const fs::path& dir, Network<T>& net) {
  const NetworkSpec stored = spec_from_json(read_json(dir / "spec.json"));
  if (!(stored == net.spec()))
    throw DataError(dir.string() + ": stored spec (" + spec_to_json(stored).dump() +
                    ") differs from the target network");
  auto arrays = load_tensors<T>(dir);
  auto take = [&](const std::string& name, Tensor<T>& dst) {
    auto it = arrays.find(name);
    if (it == arrays.end()) throw DataError(dir.string() + ": missing array '" + name + "'");
    if (it->second.shape() != dst.shape())
      throw ShapeError(dir.string() + ": array '" + name + "' has shape " +
                       shape_str(it->second.shape()) + ", network expects " + shape_str(dst.shape()));
    if (!it->second.all_finite()) throw NumericError(dir.string() + ": array '" + name + "' is not finite");
    dst = std::move(it->second);
    arrays.erase(it);
  };
  for (auto& [name, v] : net.named_parameters()) {
    Var<T> handle = v;
    take(name, handle.mutable_value());
  }
  for (auto& [name, t] : net.named_buffers()) take(name, *t);
  if (!arrays.empty()) throw DataError(dir.string() + ": unexpected array '" + arrays.begin()->first + "'");
}

template <typename T = float>
Network<T> load_network(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("checkpoint not found: " + dir.string());
  Network<T> net(spec_from_json(read_json(dir / "spec.json")), 0);
  load_into(dir, net);
  return net;
}

}  // namespace firegan::checkpoint
