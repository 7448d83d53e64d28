#pragma once

// Pre-activation bounds over a box by backward linear bound propagation on
// the forward graph. Each hidden layer is bounded by substituting linear
// relaxations of every earlier ReLU back to the input, then concretizing.

#include <algorithm>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lipcert/model.hpp"

namespace lipcert {

struct BoxDomain {
  Vector lo;
  Vector hi;

  static BoxDomain ball(const Vector& center, double eps) {
    if (!(eps >= 0.0) || !std::isfinite(eps)) throw std::invalid_argument("eps must be finite and non-negative");
    BoxDomain box{center.array() - eps, center.array() + eps};
    box.validate();
    return box;
  }

  std::size_t dim() const { return static_cast<std::size_t>(lo.size()); }
  Vector center() const { return 0.5 * (lo + hi); }

  void validate() const {
    if (lo.size() != hi.size()) throw DimensionError("box lo/hi length mismatch");
    if (!lo.allFinite() || !hi.allFinite()) throw std::invalid_argument("box bounds must be finite");
    if ((lo.array() > hi.array()).any()) throw std::invalid_argument("box has lo > hi");
  }

  bool contains(const Vector& x, double tol = 0.0) const {
    return ((x.array() >= lo.array() - tol) && (x.array() <= hi.array() + tol)).all();
  }
};

/// Rows are the quantities being bounded; row r stands for
/// coeff.row(r) . v + bias(r), where v is the layer the propagation sits at.
struct LinearForm {
  Matrix coeff;
  Vector bias;

  static LinearForm identity(std::size_t n) {
    return {Matrix::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n)),
            Vector::Zero(static_cast<Eigen::Index>(n))};
  }
  std::size_t rows() const { return static_cast<std::size_t>(coeff.rows()); }
  std::size_t width() const { return static_cast<std::size_t>(coeff.cols()); }
};

enum class Direction { upper, lower };

/// Per-neuron lines with lower(z) <= relu(z) <= upper(z) on [l, u].
struct ReluRelaxation {
  Vector lower_slope;
  Vector lower_intercept;
  Vector upper_slope;
  Vector upper_intercept;
};

enum class LowerSlopePolicy { adaptive, zero, one };

struct LayerIntervals {
  Vector l;
  Vector u;
};

inline ReluRelaxation relu_relaxation(const Vector& l, const Vector& u,
                                      LowerSlopePolicy policy = LowerSlopePolicy::adaptive) {
  if (l.size() != u.size()) throw DimensionError("relu_relaxation: l/u length mismatch");
  const Eigen::Index n = l.size();
  ReluRelaxation r{Vector::Zero(n), Vector::Zero(n), Vector::Zero(n), Vector::Zero(n)};
  for (Eigen::Index j = 0; j < n; ++j) {
    const double lo = l(j);
    const double hi = u(j);
    if (lo > hi) throw std::invalid_argument("relu_relaxation: l > u at neuron " + std::to_string(j));
    if (lo == hi) {
      // both lines are the constant relu(l)
      r.lower_intercept(j) = relu(lo);
      r.upper_intercept(j) = relu(lo);
    } else if (lo >= 0.0) {
      r.lower_slope(j) = 1.0;
      r.upper_slope(j) = 1.0;
    } else if (hi <= 0.0) {
      // all zero
    } else {
      const double slope = hi / (hi - lo);
      r.upper_slope(j) = slope;
      r.upper_intercept(j) = -lo * slope;
      switch (policy) {
        case LowerSlopePolicy::adaptive: r.lower_slope(j) = hi >= -lo ? 1.0 : 0.0; break;
        case LowerSlopePolicy::zero: r.lower_slope(j) = 0.0; break;
        case LowerSlopePolicy::one: r.lower_slope(j) = 1.0; break;
      }
    }
  }
  return r;
}

/// Linear bounds of one layer in terms of the previous one:
/// lower_p * x + lower_q <= h(x) <= upper_p * x + upper_q.
struct LayerRelaxation {
  Matrix lower_p;
  Vector lower_q;
  Matrix upper_p;
  Vector upper_q;
};

/// h = relu(W x + b) relaxed through `relax`.
inline LayerRelaxation relax_layer(const AffineLayer& layer, const ReluRelaxation& relax) {
  LayerRelaxation out;
  out.lower_p = relax.lower_slope.asDiagonal() * layer.weight;
  out.upper_p = relax.upper_slope.asDiagonal() * layer.weight;
  out.lower_q = relax.lower_slope.cwiseProduct(layer.bias) + relax.lower_intercept;
  out.upper_q = relax.upper_slope.cwiseProduct(layer.bias) + relax.upper_intercept;
  return out;
}

/// Exact (non-relaxed) affine layer as a degenerate relaxation.
inline LayerRelaxation affine_relaxation(const AffineLayer& layer) {
  return {layer.weight, layer.bias, layer.weight, layer.bias};
}

inline LinearForm backward_substitute(const LinearForm& form, const LayerRelaxation& relax,
                                      Direction dir = Direction::upper) {
  if (form.coeff.cols() != relax.upper_p.rows() || relax.lower_p.rows() != relax.upper_p.rows() ||
      relax.lower_p.cols() != relax.upper_p.cols() || relax.upper_q.size() != relax.upper_p.rows() ||
      relax.lower_q.size() != relax.lower_p.rows()) {
    throw DimensionError("backward_substitute: shape mismatch");
  }
  const Matrix pos = form.coeff.cwiseMax(0.0);
  const Matrix neg = form.coeff.cwiseMin(0.0);
  const bool up = dir == Direction::upper;
  const Matrix& p_pos = up ? relax.upper_p : relax.lower_p;
  const Matrix& p_neg = up ? relax.lower_p : relax.upper_p;
  const Vector& q_pos = up ? relax.upper_q : relax.lower_q;
  const Vector& q_neg = up ? relax.lower_q : relax.upper_q;
  LinearForm out;
  out.coeff = pos * p_pos + neg * p_neg;
  out.bias = form.bias + pos * q_pos + neg * q_neg;
  return out;
}

inline Vector concretize(const LinearForm& form, const BoxDomain& box, Direction dir) {
  if (static_cast<std::size_t>(form.coeff.cols()) != box.dim()) {
    throw DimensionError("concretize: form width does not match box dimension");
  }
  const Matrix pos = form.coeff.cwiseMax(0.0);
  const Matrix neg = form.coeff.cwiseMin(0.0);
  if (dir == Direction::upper) return pos * box.hi + neg * box.lo + form.bias;
  return pos * box.lo + neg * box.hi + form.bias;
}

// -- per-neuron sign constraints (branch-and-bound overrides) --------------

struct NeuronRef {
  std::size_t layer = 0;   // hidden layer index, 0-based
  std::size_t neuron = 0;

  auto operator<=>(const NeuronRef&) const = default;
};

enum class Sign { negative, positive };

using SignConstraints = std::map<NeuronRef, Sign>;

inline constexpr double kDefaultTildeEps = 1e-9;

/// Clamp (l, u) to (l, -eps) or (eps, u). Returns false if empty.
inline bool apply_sign(double& l, double& u, Sign s, double tilde_eps) {
  if (s == Sign::negative) {
    u = std::min(u, -tilde_eps);
  } else {
    l = std::max(l, tilde_eps);
  }
  return l <= u;
}

enum class IntermediateMethod { linear, interval };

struct ForwardBoundOptions {
  LowerSlopePolicy lower_slope = LowerSlopePolicy::adaptive;
  IntermediateMethod method = IntermediateMethod::linear;
  double tilde_eps = kDefaultTildeEps;
};

namespace detail {

inline LayerIntervals bound_layer_linear(const Network& net, const BoxDomain& box, std::size_t target,
                                         const std::vector<LayerIntervals>& earlier, LowerSlopePolicy policy) {
  const auto& layer = net.layer(target);
  LinearForm up{layer.weight, layer.bias};
  LinearForm lo = up;
  for (std::size_t k = target; k-- > 0;) {
    const auto relax = relax_layer(net.layer(k), relu_relaxation(earlier[k].l, earlier[k].u, policy));
    up = backward_substitute(up, relax, Direction::upper);
    lo = backward_substitute(lo, relax, Direction::lower);
  }
  return {concretize(lo, box, Direction::lower), concretize(up, box, Direction::upper)};
}

inline LayerIntervals bound_layer_interval(const Network& net, const BoxDomain& box, std::size_t target,
                                           const std::vector<LayerIntervals>& earlier) {
  Vector in_lo = box.lo;
  Vector in_hi = box.hi;
  if (target > 0) {
    in_lo = earlier[target - 1].l.cwiseMax(0.0);
    in_hi = earlier[target - 1].u.cwiseMax(0.0);
  }
  const auto& layer = net.layer(target);
  const Matrix pos = layer.weight.cwiseMax(0.0);
  const Matrix neg = layer.weight.cwiseMin(0.0);
  return {pos * in_lo + neg * in_hi + layer.bias, pos * in_hi + neg * in_lo + layer.bias};
}

}  // namespace detail

/// Bounds on every hidden pre-activation z_1..z_{n-1}. `constraints` clamp
/// individual neurons after their layer is concretized. When `reuse` is given,
/// layers below `reuse_below` are copied from it and every recomputed layer is
/// intersected with it (the caller guarantees `reuse` is valid for a superset
/// of the current domain). Returns nullopt when a constraint empties an interval.
inline std::optional<std::vector<LayerIntervals>> preactivation_bounds(
    const Network& net, const BoxDomain& box, const SignConstraints& constraints = {},
    const ForwardBoundOptions& opts = {}, const std::vector<LayerIntervals>* reuse = nullptr,
    std::size_t reuse_below = 0) {
  box.validate();
  if (box.dim() != net.input_dim()) throw DimensionError("box dimension does not match network input");
  std::vector<LayerIntervals> out;
  out.reserve(net.num_hidden());
  auto it = constraints.begin();
  for (std::size_t h = 0; h < net.num_hidden(); ++h) {
    LayerIntervals li;
    if (reuse != nullptr && h < reuse_below) {
      li = (*reuse)[h];
    } else {
      li = opts.method == IntermediateMethod::linear
               ? detail::bound_layer_linear(net, box, h, out, opts.lower_slope)
               : detail::bound_layer_interval(net, box, h, out);
      // rounding can leave l a hair above u on zero-width inputs
      li.u = li.u.cwiseMax(li.l);
      if (reuse != nullptr) {
        li.l = li.l.cwiseMax((*reuse)[h].l);
        li.u = li.u.cwiseMin((*reuse)[h].u);
      }
    }
    for (; it != constraints.end() && it->first.layer == h; ++it) {
      const auto j = static_cast<Eigen::Index>(it->first.neuron);
      if (j >= li.l.size()) throw std::out_of_range("sign constraint neuron index out of range");
      if (!apply_sign(li.l(j), li.u(j), it->second, opts.tilde_eps)) return std::nullopt;
    }
    if ((li.l.array() > li.u.array()).any()) return std::nullopt;
    out.push_back(std::move(li));
  }
  if (it != constraints.end()) throw std::out_of_range("sign constraint layer index out of range");
  return out;
}

}  // namespace lipcert
