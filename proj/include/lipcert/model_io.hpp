#pragma once

// Version-1 JSON model format:
//
//   {"version":1, "input_shape":[d] or [c,h,w],
//    "layers":[{"type":"dense","weight":[[...]],"bias":[...]},
//              {"type":"relu"},
//              {"type":"conv2d","kernel":[[[[...]]]],"bias":[...],
//               "stride":[s,s],"padding":[p,p]}]}
//
// A relu entry must follow a dense/conv2d entry, must not be last, and may
// not repeat. Convolutions are lowered to dense layers while loading.

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lipcert/model.hpp"

namespace lipcert {

namespace detail {

inline double json_number(const nlohmann::json& v, int layer, const char* field) {
  if (!v.is_number()) {
    throw ModelError(std::string("field '") + field + "' must contain numbers", layer);
  }
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw ModelError(std::string("non-finite entry in '") + field + "'", layer);
  return d;
}

inline Vector json_vector(const nlohmann::json& v, int layer, const char* field) {
  if (!v.is_array()) throw ModelError(std::string("field '") + field + "' must be an array", layer);
  Vector out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<Eigen::Index>(i)) = json_number(v[i], layer, field);
  return out;
}

inline const nlohmann::json& require(const nlohmann::json& obj, const char* key, int layer) {
  auto it = obj.find(key);
  if (it == obj.end()) throw ModelError(std::string("missing field '") + key + "'", layer);
  return *it;
}

inline std::array<std::size_t, 2> json_pair(const nlohmann::json& obj, const char* key, int layer,
                                            std::size_t fallback, bool allow_zero) {
  auto it = obj.find(key);
  if (it == obj.end()) return {fallback, fallback};
  const auto& v = *it;
  if (!v.is_array() || v.size() != 2 || !v[0].is_number_integer() || !v[1].is_number_integer()) {
    throw ModelError(std::string("field '") + key + "' must be a pair of integers", layer);
  }
  const auto a = v[0].get<long long>();
  const auto b = v[1].get<long long>();
  if (a < 0 || b < 0 || (!allow_zero && (a == 0 || b == 0))) {
    throw ModelError(std::string("field '") + key + "' out of range", layer);
  }
  return {static_cast<std::size_t>(a), static_cast<std::size_t>(b)};
}

inline AffineLayer parse_dense(const nlohmann::json& entry, int index) {
  const auto& w = require(entry, "weight", index);
  if (!w.is_array() || w.empty()) throw ModelError("field 'weight' must be a non-empty matrix", index);
  const std::size_t rows = w.size();
  if (!w[0].is_array()) throw ModelError("field 'weight' must be a matrix", index);
  const std::size_t cols = w[0].size();
  AffineLayer layer;
  layer.weight.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows; ++r) {
    if (!w[r].is_array() || w[r].size() != cols) throw ModelError("ragged weight matrix", index);
    for (std::size_t c = 0; c < cols; ++c) {
      layer.weight(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          json_number(w[r][c], index, "weight");
    }
  }
  layer.bias = json_vector(require(entry, "bias", index), index, "bias");
  layer.validate(index);
  return layer;
}

inline ConvSpec parse_conv(const nlohmann::json& entry, int index, const std::vector<std::size_t>& shape) {
  if (shape.size() != 3) {
    throw ModelError("conv2d needs a [channels, height, width] input; current shape is flat", index);
  }
  ConvSpec spec;
  spec.input_shape = {shape[0], shape[1], shape[2]};
  const auto& k = require(entry, "kernel", index);
  auto bad = [&]() { return ModelError("field 'kernel' must be a 4-d array [out][in][kh][kw]", index); };
  if (!k.is_array() || k.empty() || !k[0].is_array() || k[0].empty() || !k[0][0].is_array() ||
      k[0][0].empty() || !k[0][0][0].is_array()) {
    throw bad();
  }
  spec.out_channels = k.size();
  spec.in_channels = k[0].size();
  spec.kernel_h = k[0][0].size();
  spec.kernel_w = k[0][0][0].size();
  spec.kernel.reserve(spec.out_channels * spec.in_channels * spec.kernel_h * spec.kernel_w);
  for (const auto& o : k) {
    if (!o.is_array() || o.size() != spec.in_channels) throw bad();
    for (const auto& c : o) {
      if (!c.is_array() || c.size() != spec.kernel_h) throw bad();
      for (const auto& r : c) {
        if (!r.is_array() || r.size() != spec.kernel_w) throw bad();
        for (const auto& v : r) spec.kernel.push_back(json_number(v, index, "kernel"));
      }
    }
  }
  spec.bias = json_vector(require(entry, "bias", index), index, "bias");
  spec.stride = json_pair(entry, "stride", index, 1, false);
  spec.padding = json_pair(entry, "padding", index, 0, true);
  try {
    spec.validate();
  } catch (const ModelError& e) {
    throw ModelError(e.what(), index);
  }
  return spec;
}

}  // namespace detail

inline Network network_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ModelError("model document must be a JSON object");
  const auto& version = detail::require(doc, "version", -1);
  if (!version.is_number_integer() || version.get<int>() != 1) {
    throw ModelError("unsupported model format version");
  }
  const auto& shape_json = detail::require(doc, "input_shape", -1);
  if (!shape_json.is_array() || (shape_json.size() != 1 && shape_json.size() != 3)) {
    throw ModelError("input_shape must be [d] or [c,h,w]");
  }
  std::vector<std::size_t> shape;
  for (const auto& s : shape_json) {
    if (!s.is_number_integer() || s.get<long long>() <= 0) {
      throw ModelError("input_shape entries must be positive integers");
    }
    shape.push_back(static_cast<std::size_t>(s.get<long long>()));
  }
  auto flat_size = [](const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (auto v : s) n *= v;
    return n;
  };

  const auto& entries = detail::require(doc, "layers", -1);
  if (!entries.is_array() || entries.empty()) throw ModelError("layers must be a non-empty array");

  std::vector<AffineLayer> layers;
  bool prev_was_relu = false;
  bool prev_was_affine = false;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const int index = static_cast<int>(i);
    const auto& entry = entries[i];
    if (!entry.is_object() || !entry.contains("type") || !entry["type"].is_string()) {
      throw ModelError("layer entry must be an object with a string 'type'", index);
    }
    const auto type = entry["type"].get<std::string>();
    if (type == "relu") {
      if (!prev_was_affine) {
        throw ModelError(prev_was_relu ? "consecutive relu entries" : "relu must follow a dense or conv2d layer",
                         index);
      }
      if (i + 1 == entries.size()) throw ModelError("relu cannot be the last layer", index);
      prev_was_relu = true;
      prev_was_affine = false;
      continue;
    }
    AffineLayer next;
    if (type == "dense") {
      auto layer = detail::parse_dense(entry, index);
      if (layer.in_dim() != flat_size(shape)) {
        throw ModelError("dimension mismatch: dense layer expects input of size " +
                             std::to_string(layer.in_dim()) + " but receives " + std::to_string(flat_size(shape)),
                         index);
      }
      shape = {layer.out_dim()};
      next = std::move(layer);
    } else if (type == "conv2d") {
      auto spec = detail::parse_conv(entry, index, shape);
      const auto out = spec.output_shape();
      next = lower_conv(spec);
      shape = {out[0], out[1], out[2]};
    } else {
      throw ModelError("unsupported layer type '" + type + "'", index);
    }
    if (prev_was_affine) {
      // no activation in between: compose the two affine maps
      auto& prev = layers.back();
      prev.bias = (next.weight * prev.bias + next.bias).eval();
      prev.weight = (next.weight * prev.weight).eval();
    } else {
      layers.push_back(std::move(next));
    }
    prev_was_affine = true;
    prev_was_relu = false;
  }
  return Network(std::move(layers));
}

inline Network load_network(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ModelError("cannot open model file '" + path + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::parse_error& e) {
    throw ModelError("malformed JSON in '" + path + "': " + e.what());
  }
  return network_from_json(doc);
}

/// Dense-only serialization; conv layers are written in their lowered form.
inline nlohmann::json network_to_json(const Network& net) {
  nlohmann::json doc;
  doc["version"] = 1;
  doc["input_shape"] = {net.input_dim()};
  auto layers = nlohmann::json::array();
  for (std::size_t i = 0; i < net.num_layers(); ++i) {
    const auto& layer = net.layer(i);
    nlohmann::json weight = nlohmann::json::array();
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      std::vector<double> row(layer.weight.row(r).begin(), layer.weight.row(r).end());
      weight.push_back(row);
    }
    std::vector<double> bias(layer.bias.begin(), layer.bias.end());
    layers.push_back({{"type", "dense"}, {"weight", weight}, {"bias", bias}});
    if (net.activation_after(i)) layers.push_back({{"type", "relu"}});
  }
  doc["layers"] = layers;
  return doc;
}

/// 64-bit FNV-1a of a byte string, as 16 hex digits.
inline std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

}  // namespace lipcert
