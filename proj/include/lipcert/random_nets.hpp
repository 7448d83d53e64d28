#pragma once

// Seeded random (untrained) networks for tests and the `gen` command.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "lipcert/model.hpp"

namespace lipcert {

struct RandomNetSpec {
  std::size_t input_dim = 8;
  std::vector<std::size_t> hidden{16, 16};
  std::size_t output_dim = 4;
  double weight_scale = 1.0;  // stddev multiplier on 1/sqrt(fan_in)
  double bias_scale = 0.1;
};

inline Network random_network(const RandomNetSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::size_t> dims{spec.input_dim};
  dims.insert(dims.end(), spec.hidden.begin(), spec.hidden.end());
  dims.push_back(spec.output_dim);

  std::vector<AffineLayer> layers;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const auto in = static_cast<Eigen::Index>(dims[i]);
    const auto out = static_cast<Eigen::Index>(dims[i + 1]);
    const double stddev = spec.weight_scale / std::sqrt(static_cast<double>(in));
    AffineLayer layer{Matrix(out, in), Vector(out)};
    for (Eigen::Index r = 0; r < out; ++r) {
      for (Eigen::Index c = 0; c < in; ++c) layer.weight(r, c) = stddev * normal(rng);
      layer.bias(r) = spec.bias_scale * normal(rng);
    }
    layers.push_back(std::move(layer));
  }
  return Network(std::move(layers));
}

inline Vector random_point(std::size_t dim, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Vector x(static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = u(rng);
  return x;
}

}  // namespace lipcert
