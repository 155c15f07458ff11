#pragma once

// ckpt-v1 layout (little-endian):
//   "ckpt-v1\0" | u32 meta_len | meta JSON | u32 n_params |
//   n_params x { u32 name_len | name | i32 rows | i32 cols | f32[rows*cols] } |
//   u8 has_optimizer | [ i64 step | n_params x { f64 m[size] | f64 v[size] } ]

#include <cstdint>
#include <cstring>
#include <string>

#include <nlohmann/json.hpp>

#include "lbm/core/binio.hpp"
#include "lbm/nn/optim.hpp"

namespace lbm::nn {

inline constexpr const char* kCheckpointFormat = "ckpt-v1";

template <class T>
std::string encode_checkpoint(const nlohmann::json& meta, const ParamList<T>& params, const AdamW<T>* opt = nullptr) {
  std::string buf(kCheckpointFormat, 8);
  const std::string m = meta.dump();
  put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(m.size()));
  buf += m;
  put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(params.size()));
  for (const auto* p : params) {
    put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(p->name.size()));
    buf += p->name;
    put_le<std::int32_t>(buf, p->shape.rows);
    put_le<std::int32_t>(buf, p->shape.cols);
    for (T v : p->value) put_le<float>(buf, static_cast<float>(v));
  }
  const bool has_opt = opt != nullptr && !opt->first_moments().empty();
  put_le<std::uint8_t>(buf, has_opt ? 1 : 0);
  if (has_opt) {
    put_le<std::int64_t>(buf, opt->steps());
    for (std::size_t i = 0; i < params.size(); ++i) {
      for (double x : opt->first_moments()[i]) put_le<double>(buf, x);
      for (double x : opt->second_moments()[i]) put_le<double>(buf, x);
    }
  }
  return buf;
}

template <class T>
void save_checkpoint(const std::string& path, const nlohmann::json& meta, const ParamList<T>& params,
                     const AdamW<T>* opt = nullptr) {
  write_file(path, encode_checkpoint(meta, params, opt));
}

// Reads only the metadata blob.
inline nlohmann::json read_checkpoint_meta(const std::string& path) {
  const std::string content = read_file(path, "checkpoint");
  if (content.size() < 8 || std::memcmp(content.data(), kCheckpointFormat, 8) != 0)
    throw MissingArtifact("'" + path + "' is not a ckpt-v1 checkpoint");
  ByteReader rd(content.data() + 8, content.size() - 8, "checkpoint '" + path + "'");
  return nlohmann::json::parse(rd.bytes(rd.get<std::uint32_t>()));
}

// Loads values into params, which must match the stored names and shapes in
// order. Returns the metadata blob.
template <class T>
nlohmann::json load_checkpoint(const std::string& path, const ParamList<T>& params, AdamW<T>* opt = nullptr) {
  const std::string content = read_file(path, "checkpoint");
  if (content.size() < 8 || std::memcmp(content.data(), kCheckpointFormat, 8) != 0)
    throw MissingArtifact("'" + path + "' is not a ckpt-v1 checkpoint");
  ByteReader rd(content.data() + 8, content.size() - 8, "checkpoint '" + path + "'");
  nlohmann::json meta = nlohmann::json::parse(rd.bytes(rd.get<std::uint32_t>()));
  const auto n = rd.get<std::uint32_t>();
  if (n != params.size())
    throw MissingArtifact("checkpoint '" + path + "' holds " + std::to_string(n) + " tensors, model expects " +
                          std::to_string(params.size()));
  for (auto* p : params) {
    const std::string name = rd.bytes(rd.get<std::uint32_t>());
    const int rows = rd.get<std::int32_t>(), cols = rd.get<std::int32_t>();
    if (name != p->name || rows != p->shape.rows || cols != p->shape.cols)
      throw MissingArtifact("checkpoint '" + path + "' tensor '" + name + "' " + to_string(Shape{rows, cols}) +
                            " does not match model tensor '" + p->name + "' " + to_string(p->shape));
    for (T& v : p->value) v = static_cast<T>(rd.get<float>());
  }
  const bool has_opt = rd.get<std::uint8_t>() != 0;
  if (has_opt && opt != nullptr) {
    opt->set_steps(rd.get<std::int64_t>());
    auto& m = opt->first_moments();
    auto& v = opt->second_moments();
    m.assign(params.size(), {});
    v.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) {
      m[i].resize(params[i]->value.size());
      v[i].resize(params[i]->value.size());
      for (double& x : m[i]) x = rd.get<double>();
      for (double& x : v[i]) x = rd.get<double>();
    }
  }
  return meta;
}

}  // namespace lbm::nn
