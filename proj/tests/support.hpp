#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

#include "lipcert/lipcert.hpp"

namespace testing_support {

using lipcert::AffineLayer;
using lipcert::Matrix;
using lipcert::Network;
using lipcert::Vector;

inline Matrix mat(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index r = 0;
  for (const auto& row : rows) {
    Eigen::Index c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}

inline Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

// W1=[[1]], b=[0], relu, W2=[[1]]: one neuron, unstable on [-1, 1]
inline Network toy_unstable() { return Network({{mat({{1}}), vec({0})}, {mat({{1}}), vec({0})}}); }

inline Matrix weight_product(const Network& net) {
  Matrix p = net.layer(0).weight;
  for (std::size_t i = 1; i < net.num_layers(); ++i) p = (net.layer(i).weight * p).eval();
  return p;
}

inline Network negate_last(const Network& net) {
  auto layers = net.layers();
  layers.back().weight = -layers.back().weight;
  layers.back().bias = -layers.back().bias;
  return Network(std::move(layers));
}

inline Network random_net(std::uint64_t seed, std::size_t d, std::vector<std::size_t> hidden, std::size_t k) {
  lipcert::RandomNetSpec spec;
  spec.input_dim = d;
  spec.hidden = std::move(hidden);
  spec.output_dim = k;
  return lipcert::random_network(spec, seed);
}

/// Direct sliding-window convolution on a (c, h, w) row-major tensor.
inline Vector conv_direct(const lipcert::ConvSpec& s, const Vector& x) {
  const std::size_t C = s.input_shape[0], H = s.input_shape[1], W = s.input_shape[2];
  const std::size_t OH = (H + 2 * s.padding[0] - s.kernel_h) / s.stride[0] + 1;
  const std::size_t OW = (W + 2 * s.padding[1] - s.kernel_w) / s.stride[1] + 1;
  // zero-padded copy of the input
  const std::size_t PH = H + 2 * s.padding[0], PW = W + 2 * s.padding[1];
  std::vector<double> padded(C * PH * PW, 0.0);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j)
        padded[(c * PH + i + s.padding[0]) * PW + j + s.padding[1]] =
            x(static_cast<Eigen::Index>((c * H + i) * W + j));
  Vector out(static_cast<Eigen::Index>(s.out_channels * OH * OW));
  for (std::size_t o = 0; o < s.out_channels; ++o) {
    for (std::size_t i = 0; i < OH; ++i) {
      for (std::size_t j = 0; j < OW; ++j) {
        double acc = s.bias(static_cast<Eigen::Index>(o));
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t r = 0; r < s.kernel_h; ++r)
            for (std::size_t q = 0; q < s.kernel_w; ++q)
              acc += s.k(o, c, r, q) * padded[(c * PH + i * s.stride[0] + r) * PW + j * s.stride[1] + q];
        out(static_cast<Eigen::Index>((o * OH + i) * OW + j)) = acc;
      }
    }
  }
  return out;
}

inline lipcert::ConvSpec random_conv(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> small(1, 3), kern(1, 3), pad(0, 1), stride(1, 2), extent(3, 6);
  std::normal_distribution<double> normal;
  lipcert::ConvSpec s;
  s.in_channels = small(rng);
  s.out_channels = small(rng);
  s.kernel_h = kern(rng);
  s.kernel_w = kern(rng);
  s.stride = {stride(rng), stride(rng)};
  s.padding = {pad(rng), pad(rng)};
  s.input_shape = {s.in_channels, extent(rng), extent(rng)};
  s.kernel.resize(s.out_channels * s.in_channels * s.kernel_h * s.kernel_w);
  for (auto& v : s.kernel) v = normal(rng);
  s.bias.resize(static_cast<Eigen::Index>(s.out_channels));
  for (Eigen::Index i = 0; i < s.bias.size(); ++i) s.bias(i) = normal(rng);
  return s;
}

struct NetAndBox {
  Network net;
  lipcert::BoxDomain box;
  std::size_t unstable = 0;
};

/// Random small net and box with between 1 and `max_unstable` unstable
/// neurons, found by shrinking the radius.
inline NetAndBox few_unstable(std::uint64_t seed, std::size_t max_unstable = 12) {
  for (std::uint64_t attempt = 0;; ++attempt) {
    auto net = random_net(seed * 1000 + attempt, 4, {8, 8}, 3);
    const Vector x0 = lipcert::random_point(4, seed * 7919 + attempt);
    for (double eps : {0.5, 0.3, 0.2, 0.1, 0.05, 0.02}) {
      auto box = lipcert::BoxDomain::ball(x0, eps);
      const auto n = lipcert::count_unstable(*lipcert::preactivation_bounds(net, box));
      if (n >= 1 && n <= max_unstable) return {std::move(net), std::move(box), n};
    }
  }
}

}  // namespace testing_support
