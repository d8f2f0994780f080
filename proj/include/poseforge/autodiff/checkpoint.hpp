#pragma once

#include "poseforge/autodiff/tensor.hpp"
#include "poseforge/binio.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <string>
#include <type_traits>
#include <vector>

// Checkpoint layout: magic "PFSCKPT\1", u64 manifest length, manifest JSON,
// then raw little-endian payloads in manifest order. Each parameter stores
// value, first moment and second moment; each buffer stores one tensor.
namespace poseforge::ad {

inline constexpr std::string_view kCheckpointMagic{"PFSCKPT\1", 8};

template <class T>
constexpr const char* dtype_name() {
  return std::is_same_v<T, float> ? "f32" : "f64";
}

template <class T>
struct NamedTensor {
  std::string name;
  Tensor<T>* tensor;
};

template <class T>
std::vector<std::uint8_t> encode_checkpoint(const nlohmann::json& meta,
                                            const std::vector<Parameter<T>*>& params,
                                            const std::vector<NamedTensor<T>>& buffers) {
  nlohmann::json manifest;
  manifest["dtype"] = dtype_name<T>();
  manifest["meta"] = meta;
  auto& entries = manifest["tensors"];
  entries = nlohmann::json::array();
  for (const auto* p : params) {
    entries.push_back({{"name", p->name}, {"kind", "param"}, {"shape", p->value.shape()},
                       {"step", p->step}});
  }
  for (const auto& b : buffers) {
    entries.push_back({{"name", b.name}, {"kind", "buffer"}, {"shape", b.tensor->shape()}});
  }
  binio::Writer w;
  w.magic(kCheckpointMagic);
  w.string(manifest.dump());
  auto put = [&](const Tensor<T>& t) { w.bytes(t.data(), t.numel() * sizeof(T)); };
  for (const auto* p : params) {
    put(p->value);
    put(p->m);
    put(p->v);
  }
  for (const auto& b : buffers) put(*b.tensor);
  return w.take();
}

/// Reads the manifest's caller metadata without touching the payload.
inline nlohmann::json read_checkpoint_meta(const std::vector<std::uint8_t>& bytes) {
  binio::Reader r(bytes);
  r.expect_magic(kCheckpointMagic, "checkpoint");
  return nlohmann::json::parse(r.string()).at("meta");
}

/// Fills parameters and buffers by name. Every tensor in the file must have
/// a destination of identical shape and vice versa.
template <class T>
void decode_checkpoint(const std::vector<std::uint8_t>& bytes,
                       const std::vector<Parameter<T>*>& params,
                       const std::vector<NamedTensor<T>>& buffers) {
  binio::Reader r(bytes);
  r.expect_magic(kCheckpointMagic, "checkpoint");
  const auto manifest = nlohmann::json::parse(r.string());
  const std::string dtype = manifest.at("dtype");
  if (dtype != "f32" && dtype != "f64") throw std::runtime_error("checkpoint: unknown dtype " + dtype);

  std::map<std::string, Parameter<T>*> by_name;
  for (auto* p : params) by_name[p->name] = p;
  std::map<std::string, Tensor<T>*> buf_by_name;
  for (const auto& b : buffers) buf_by_name[b.name] = b.tensor;

  auto get = [&](Tensor<T>& dst) {
    if (dtype == "f32") {
      std::vector<float> tmp(dst.numel());
      r.bytes(tmp.data(), tmp.size() * sizeof(float));
      std::copy(tmp.begin(), tmp.end(), dst.data());
    } else {
      std::vector<double> tmp(dst.numel());
      r.bytes(tmp.data(), tmp.size() * sizeof(double));
      std::copy(tmp.begin(), tmp.end(), dst.data());
    }
  };

  std::size_t params_seen = 0, buffers_seen = 0;
  for (const auto& e : manifest.at("tensors")) {
    const std::string name = e.at("name");
    const Shape shape = e.at("shape").get<Shape>();
    if (e.at("kind") == "param") {
      auto it = by_name.find(name);
      if (it == by_name.end()) throw std::runtime_error("checkpoint: unexpected parameter " + name);
      Parameter<T>& p = *it->second;
      if (p.value.shape() != shape) {
        throw std::runtime_error("checkpoint: shape mismatch for " + name + ": " +
                                 shape_str(shape) + " vs " + shape_str(p.value.shape()));
      }
      get(p.value);
      get(p.m);
      get(p.v);
      p.step = e.at("step").get<std::int64_t>();
      p.zero_grad();
      ++params_seen;
    } else {
      auto it = buf_by_name.find(name);
      if (it == buf_by_name.end()) throw std::runtime_error("checkpoint: unexpected buffer " + name);
      if (it->second->shape() != shape) throw std::runtime_error("checkpoint: shape mismatch for " + name);
      get(*it->second);
      ++buffers_seen;
    }
  }
  if (params_seen != params.size() || buffers_seen != buffers.size()) {
    throw std::runtime_error("checkpoint: tensor set does not match the network");
  }
  if (r.remaining() != 0) throw std::runtime_error("checkpoint: trailing bytes");
}

}  // namespace poseforge::ad
