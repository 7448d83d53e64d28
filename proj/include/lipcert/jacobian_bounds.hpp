#pragma once

// Certified upper bounds on the l_inf local Lipschitz constant of a ReLU
// network over a box.
//
// The Clarke Jacobian obeys J_n = W_n and J_k = J_{k+1} D_k W_k, where D_k is
// a diagonal of ReLU Clarke gradients (0, 1, or anything in [0,1] when the
// pre-activation interval straddles zero). For each output row we bound the
// entries of every J_k by propagating linear bounds backwards along this
// chain, then bound ||J_1 row||_1 by relaxing |.| to a line and propagating
// that line up to J_n = W_n.
//
// Indexing: jac[k] bounds the Jacobian of the selected output with respect to
// the input of affine layer k (0-based), so jac[0] is J w.r.t. x and
// jac[n-1] is the constant last weight row. Neuron j of hidden layer h is
// relaxed using jac[h+1][j].

#include <algorithm>
#include <chrono>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lipcert/forward_bounds.hpp"
#include "lipcert/model.hpp"

namespace lipcert {

/// Width below which an interval is treated as a point in the closed-form
/// relaxations.
inline constexpr double kDegenerateWidth = 1e-12;

enum class DeltaState { zero, one, unstable };

inline DeltaState delta_state(double l, double u) {
  if (u < 0.0) return DeltaState::zero;
  if (l > 0.0) return DeltaState::one;
  return DeltaState::unstable;
}

inline std::vector<DeltaState> delta_states(const LayerIntervals& li) {
  std::vector<DeltaState> out(static_cast<std::size_t>(li.l.size()));
  for (Eigen::Index j = 0; j < li.l.size(); ++j) out[static_cast<std::size_t>(j)] = delta_state(li.l(j), li.u(j));
  return out;
}

inline std::size_t count_unstable(const std::vector<LayerIntervals>& intervals) {
  std::size_t n = 0;
  for (const auto& li : intervals) {
    for (Eigen::Index j = 0; j < li.l.size(); ++j) n += delta_state(li.l(j), li.u(j)) == DeltaState::unstable;
  }
  return n;
}

struct JacRowIntervals {
  Vector L;
  Vector U;
};

struct AbsNormRelaxation {
  Vector coeff;
  double bias = 0.0;
};

/// Upper line for sum_j |J_j| over the box [L, U]: chord of |.| per entry.
inline AbsNormRelaxation abs_norm_relaxation(const Vector& L, const Vector& U) {
  if (L.size() != U.size()) throw DimensionError("abs_norm_relaxation: L/U length mismatch");
  AbsNormRelaxation r{Vector::Zero(L.size()), 0.0};
  for (Eigen::Index j = 0; j < L.size(); ++j) {
    const double lo = L(j);
    const double hi = U(j);
    if (lo > hi) throw std::invalid_argument("abs_norm_relaxation: L > U at entry " + std::to_string(j));
    if (hi - lo < kDegenerateWidth) {
      r.bias += std::max(std::abs(lo), std::abs(hi));
      continue;
    }
    const double slope = (std::abs(hi) - std::abs(lo)) / (hi - lo);
    r.coeff(j) = slope;
    r.bias += -slope * lo + std::abs(lo);
  }
  return r;
}

/// Per-neuron lines with lower(J) <= J * d <= upper(J) for J in [L, U] and
/// d in the neuron's Clarke gradient set.
struct ClarkeRelaxation {
  Vector lower_slope;
  Vector lower_intercept;
  Vector upper_slope;
  Vector upper_intercept;

  static ClarkeRelaxation zeros(Eigen::Index n) {
    return {Vector::Zero(n), Vector::Zero(n), Vector::Zero(n), Vector::Zero(n)};
  }
};

namespace detail {

inline void check_clarke_inputs(const Vector& L, const Vector& U, const std::vector<DeltaState>& delta) {
  if (L.size() != U.size() || static_cast<std::size_t>(L.size()) != delta.size()) {
    throw DimensionError("clarke relaxation: L, U and delta lengths differ");
  }
}

inline void set_fixed_delta(ClarkeRelaxation& r, Eigen::Index j, DeltaState d) {
  if (d == DeltaState::one) {
    r.lower_slope(j) = 1.0;
    r.upper_slope(j) = 1.0;
  }
}

}  // namespace detail

/// Tightest linear relaxation of J * d, d in [0,1]: the upper line is the
/// chord of relu(J) and the lower line the chord of -relu(-J) over [L, U].
inline ClarkeRelaxation clarke_relaxation(const Vector& L, const Vector& U, const std::vector<DeltaState>& delta) {
  detail::check_clarke_inputs(L, U, delta);
  auto r = ClarkeRelaxation::zeros(L.size());
  for (Eigen::Index j = 0; j < L.size(); ++j) {
    const double lo = L(j);
    const double hi = U(j);
    if (lo > hi) throw std::invalid_argument("clarke_relaxation: L > U at neuron " + std::to_string(j));
    const auto d = delta[static_cast<std::size_t>(j)];
    if (d != DeltaState::unstable) {
      detail::set_fixed_delta(r, j, d);
      continue;
    }
    if (hi - lo < kDegenerateWidth) {
      r.lower_intercept(j) = std::min(lo, 0.0);
      r.upper_intercept(j) = std::max(hi, 0.0);
      continue;
    }
    const double width = hi - lo;
    r.upper_slope(j) = (relu(hi) - relu(lo)) / width;
    r.upper_intercept(j) = -r.upper_slope(j) * lo + relu(lo);
    r.lower_slope(j) = (-relu(-hi) + relu(-lo)) / width;
    r.lower_intercept(j) = -r.lower_slope(j) * lo - relu(-lo);
  }
  return r;
}

/// Constant-line relaxation used by the interval (RecurJac-equivalent) mode:
/// wherever the sign of J is undetermined, J * d is bounded by
/// [L * d_max, U * d_max]. Sign-determined entries keep the linear relaxation,
/// as does the last hidden layer (whose J is the constant last weight row).
inline ClarkeRelaxation interval_clarke_relaxation(const Vector& L, const Vector& U,
                                                   const std::vector<DeltaState>& delta, bool last_hidden) {
  auto r = clarke_relaxation(L, U, delta);
  if (last_hidden) return r;
  for (Eigen::Index j = 0; j < L.size(); ++j) {
    if (!(L(j) < 0.0 && 0.0 < U(j))) continue;
    const double d_max = delta[static_cast<std::size_t>(j)] == DeltaState::zero ? 0.0 : 1.0;
    r.lower_slope(j) = 0.0;
    r.upper_slope(j) = 0.0;
    r.lower_intercept(j) = L(j) * d_max;
    r.upper_intercept(j) = U(j) * d_max;
  }
  return r;
}

/// One step J_k -> J_{k+1} of backward propagation on the Jacobian graph.
/// Each row r of `form` represents J_k . a_r + bias_r; J_k . a = J_{k+1} D_k (W_k a),
/// so W_k is folded first and the Clarke relaxation applied by sign.
inline LinearForm jacobian_backward_step(const LinearForm& form, const AffineLayer& layer,
                                         const ClarkeRelaxation& relax, Direction dir) {
  if (static_cast<std::size_t>(form.coeff.cols()) != layer.in_dim() ||
      static_cast<std::size_t>(relax.upper_slope.size()) != layer.out_dim()) {
    throw DimensionError("jacobian_backward_step: shape mismatch");
  }
  const Matrix v = form.coeff * layer.weight.transpose();
  const Matrix pos = v.cwiseMax(0.0);
  const Matrix neg = v.cwiseMin(0.0);
  const bool up = dir == Direction::upper;
  const Vector& s_pos = up ? relax.upper_slope : relax.lower_slope;
  const Vector& s_neg = up ? relax.lower_slope : relax.upper_slope;
  const Vector& t_pos = up ? relax.upper_intercept : relax.lower_intercept;
  const Vector& t_neg = up ? relax.lower_intercept : relax.upper_intercept;
  LinearForm out;
  out.coeff = pos * s_pos.asDiagonal() + neg * s_neg.asDiagonal();
  out.bias = form.bias + pos * t_pos + neg * t_neg;
  return out;
}

enum class BoundMode { linear, interval, naive };

inline const char* to_string(BoundMode m) {
  switch (m) {
    case BoundMode::linear: return "linear";
    case BoundMode::interval: return "interval";
    case BoundMode::naive: return "naive";
  }
  return "?";
}

inline std::optional<BoundMode> parse_bound_mode(const std::string& s) {
  if (s == "linear") return BoundMode::linear;
  if (s == "interval") return BoundMode::interval;
  if (s == "naive") return BoundMode::naive;
  return std::nullopt;
}

struct RowBound {
  double bound = 0.0;
  std::vector<JacRowIntervals> jac;  // jac[k]: bounds on J w.r.t. input of layer k
  std::vector<Vector> top_coeff;     // coefficient of the norm bound at each jac[k]
};

struct BoundReport {
  BoundMode mode = BoundMode::linear;
  double bound = 0.0;
  std::vector<RowBound> rows;
  std::vector<LayerIntervals> preactivation;
  double runtime_s = 0.0;

  std::size_t argmax_row() const {
    std::size_t best = 0;
    for (std::size_t r = 1; r < rows.size(); ++r) {
      if (rows[r].bound > rows[best].bound) best = r;
    }
    return best;
  }
};

namespace detail {

inline ClarkeRelaxation relaxation_for(BoundMode mode, const JacRowIntervals& next, const std::vector<DeltaState>& d,
                                       bool last_hidden) {
  return mode == BoundMode::interval ? interval_clarke_relaxation(next.L, next.U, d, last_hidden)
                                     : clarke_relaxation(next.L, next.U, d);
}

}  // namespace detail

/// Bounds on every J_k for output `row`, given pre-activation intervals.
inline std::vector<JacRowIntervals> jacobian_interval_bounds(const Network& net,
                                                             const std::vector<LayerIntervals>& intervals,
                                                             std::size_t row, BoundMode mode = BoundMode::linear) {
  const std::size_t n = net.num_layers();
  if (intervals.size() != net.num_hidden()) throw DimensionError("intervals must cover every hidden layer");
  if (row >= net.output_dim()) throw std::out_of_range("output row out of range");
  if (mode == BoundMode::naive) throw std::invalid_argument("naive mode has no Jacobian intervals");

  const Vector w_row = net.layer(n - 1).weight.row(static_cast<Eigen::Index>(row)).transpose();
  std::vector<JacRowIntervals> jac(n);
  jac[n - 1] = {w_row, w_row};

  std::vector<ClarkeRelaxation> relax(net.num_hidden());
  std::vector<std::vector<DeltaState>> deltas(net.num_hidden());
  for (std::size_t h = 0; h < net.num_hidden(); ++h) deltas[h] = delta_states(intervals[h]);

  for (std::size_t k = n - 1; k-- > 0;) {
    // hidden layer k sits between jac[k] and jac[k+1]
    relax[k] = detail::relaxation_for(mode, jac[k + 1], deltas[k], k + 2 == n);
    LinearForm up = LinearForm::identity(net.layer(k).in_dim());
    LinearForm lo = up;
    for (std::size_t h = k; h + 1 < n; ++h) {
      up = jacobian_backward_step(up, net.layer(h), relax[h], Direction::upper);
      lo = jacobian_backward_step(lo, net.layer(h), relax[h], Direction::lower);
    }
    Vector U = up.coeff * w_row + up.bias;
    Vector L = lo.coeff * w_row + lo.bias;
    U = U.cwiseMax(L);
    jac[k] = {std::move(L), std::move(U)};
  }
  return jac;
}

/// Product of induced inf-norms; the row bound scales the last factor by that
/// row's l1 norm.
inline double naive_upper_bound(const Network& net) {
  double b = 1.0;
  for (const auto& layer : net.layers()) b *= induced_inf_norm(layer.weight);
  return b;
}

inline RowBound row_upper_bound(const Network& net, const std::vector<LayerIntervals>& intervals, std::size_t row,
                                BoundMode mode) {
  const std::size_t n = net.num_layers();
  RowBound rb;
  if (mode == BoundMode::naive) {
    double b = net.layer(n - 1).weight.row(static_cast<Eigen::Index>(row)).cwiseAbs().sum();
    for (std::size_t k = 0; k + 1 < n; ++k) b *= induced_inf_norm(net.layer(k).weight);
    rb.bound = b;
    return rb;
  }
  rb.jac = jacobian_interval_bounds(net, intervals, row, mode);
  const auto top = abs_norm_relaxation(rb.jac[0].L, rb.jac[0].U);
  LinearForm form{top.coeff.transpose(), Vector::Constant(1, top.bias)};
  rb.top_coeff.reserve(n);
  rb.top_coeff.push_back(top.coeff);
  for (std::size_t h = 0; h + 1 < n; ++h) {
    const auto relax = detail::relaxation_for(mode, rb.jac[h + 1], delta_states(intervals[h]), h + 2 == n);
    form = jacobian_backward_step(form, net.layer(h), relax, Direction::upper);
    rb.top_coeff.push_back(form.coeff.row(0).transpose());
  }
  const Vector w_row = net.layer(n - 1).weight.row(static_cast<Eigen::Index>(row)).transpose();
  // the true norm is non-negative, so clamping keeps the bound valid
  rb.bound = std::max(0.0, form.coeff.row(0).dot(w_row) + form.bias(0));
  return rb;
}

/// Bound from already-computed pre-activation intervals.
inline BoundReport bound_from_intervals(const Network& net, std::vector<LayerIntervals> intervals, BoundMode mode) {
  const auto start = std::chrono::steady_clock::now();
  BoundReport report;
  report.mode = mode;
  report.rows.reserve(net.output_dim());
  for (std::size_t r = 0; r < net.output_dim(); ++r) {
    report.rows.push_back(row_upper_bound(net, intervals, r, mode));
    report.bound = std::max(report.bound, report.rows.back().bound);
  }
  report.preactivation = std::move(intervals);
  report.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

/// Certified upper bound on sup ||J(x)||_inf over the box (and over the
/// sub-region selected by `constraints`). nullopt when the constraints are
/// infeasible.
inline std::optional<BoundReport> lipschitz_upper_bound(const Network& net, const BoxDomain& box,
                                                        BoundMode mode = BoundMode::linear,
                                                        const SignConstraints& constraints = {},
                                                        const ForwardBoundOptions& opts = {}) {
  const auto start = std::chrono::steady_clock::now();
  std::vector<LayerIntervals> intervals;
  if (mode != BoundMode::naive) {
    auto pre = preactivation_bounds(net, box, constraints, opts);
    if (!pre) return std::nullopt;
    intervals = std::move(*pre);
  } else {
    box.validate();
    if (box.dim() != net.input_dim()) throw DimensionError("box dimension does not match network input");
  }
  auto report = bound_from_intervals(net, std::move(intervals), mode);
  report.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

/// Entrywise bounds L1 <= J(x) <= U1 for every output row (rows of the result).
inline std::pair<Matrix, Matrix> jacobian_entry_bounds(const Network& net, const BoxDomain& box,
                                                       const ForwardBoundOptions& opts = {}) {
  auto intervals = preactivation_bounds(net, box, {}, opts);
  const auto K = static_cast<Eigen::Index>(net.output_dim());
  const auto d = static_cast<Eigen::Index>(net.input_dim());
  Matrix lower(K, d);
  Matrix upper(K, d);
  for (Eigen::Index r = 0; r < K; ++r) {
    auto jac = jacobian_interval_bounds(net, *intervals, static_cast<std::size_t>(r));
    lower.row(r) = jac[0].L.transpose();
    upper.row(r) = jac[0].U.transpose();
  }
  return {lower, upper};
}

}  // namespace lipcert
