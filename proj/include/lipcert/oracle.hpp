#pragma once

// Independent ground truth used to check the certified bounds:
//  - sampled Jacobian norms (a lower bound on the local Lipschitz constant),
//  - exhaustive activation-pattern enumeration (an upper bound on tiny nets),
//  - finite-difference Jacobian checks,
//  - a direct transcription of the RecurJac recursion.
// Nothing here calls into the linear-relaxation code paths it is used to check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "lipcert/forward_bounds.hpp"
#include "lipcert/model.hpp"

namespace lipcert {

struct SampleReport {
  double lower_bound = 0.0;
  Vector argmax_x;
  std::size_t samples = 0;  // points evaluated, including corners and center
  std::uint64_t seed = 0;
};

inline constexpr std::size_t kMaxCornerDim = 12;

/// Maximum of ||J(x)||_inf over `n_samples` uniform points, the center, and
/// every corner when the box has at most 12 dimensions.
inline SampleReport sample_lower_bound(const Network& net, const BoxDomain& box, std::size_t n_samples,
                                       std::uint64_t seed = 0, ZeroRule zero_rule = ZeroRule::one) {
  if (n_samples == 0) throw std::invalid_argument("sample_lower_bound: n_samples must be >= 1");
  box.validate();
  if (box.dim() != net.input_dim()) throw DimensionError("box dimension does not match network input");

  SampleReport rep;
  rep.seed = seed;
  rep.lower_bound = -1.0;
  auto visit = [&](const Vector& x) {
    const double v = induced_inf_norm(jacobian_at(net, x, zero_rule));
    ++rep.samples;
    if (v > rep.lower_bound) {
      rep.lower_bound = v;
      rep.argmax_x = x;
    }
  };

  visit(box.center());
  const std::size_t d = box.dim();
  if (d <= kMaxCornerDim) {
    Vector x(static_cast<Eigen::Index>(d));
    for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << d); ++mask) {
      for (std::size_t i = 0; i < d; ++i) {
        const auto k = static_cast<Eigen::Index>(i);
        x(k) = (mask >> i) & 1u ? box.hi(k) : box.lo(k);
      }
      visit(x);
    }
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Vector x(static_cast<Eigen::Index>(d));
  for (std::size_t s = 0; s < n_samples; ++s) {
    for (Eigen::Index k = 0; k < x.size(); ++k) x(k) = box.lo(k) + unit(rng) * (box.hi(k) - box.lo(k));
    visit(x);
  }
  return rep;
}

struct PatternEnumReport {
  double upper_bound = 0.0;
  std::uint64_t patterns_total = 0;
  std::uint64_t patterns_feasible = 0;
  std::size_t unstable = 0;
};

inline constexpr std::size_t kMaxEnumeratedNeurons = 20;

class TooManyUnstable : public std::runtime_error {
public:
  explicit TooManyUnstable(std::size_t count)
      : std::runtime_error("pattern enumeration refused: " + std::to_string(count) + " unstable neurons (limit " +
                           std::to_string(kMaxEnumeratedNeurons) + ")"),
        count_(count) {}
  std::size_t count() const noexcept { return count_; }

private:
  std::size_t count_;
};

/// Max of ||W_n D_{n-1} ... D_1 W_1||_inf over every 0/1 assignment to the
/// neurons whose pre-activation interval contains zero. Stable neurons keep
/// the value their interval forces. Feasibility is interval stability only,
/// so this over-approximates the exact local constant.
inline PatternEnumReport enumerate_pattern_upper_bound(const Network& net, const BoxDomain& box,
                                                       bool reverse_order = false) {
  const auto intervals = preactivation_bounds(net, box);
  struct Free {
    std::size_t layer;
    Eigen::Index neuron;
  };
  std::vector<Free> free;
  std::vector<Vector> base(net.num_hidden());
  for (std::size_t h = 0; h < net.num_hidden(); ++h) {
    const auto& li = (*intervals)[h];
    base[h] = Vector::Zero(li.l.size());
    for (Eigen::Index j = 0; j < li.l.size(); ++j) {
      if (li.l(j) > 0.0) {
        base[h](j) = 1.0;
      } else if (li.u(j) >= 0.0) {
        free.push_back({h, j});
      }
    }
  }
  if (free.size() > kMaxEnumeratedNeurons) throw TooManyUnstable(free.size());

  PatternEnumReport rep;
  rep.unstable = free.size();
  rep.patterns_total = std::uint64_t{1} << free.size();
  std::vector<Vector> diag = base;
  for (std::uint64_t i = 0; i < rep.patterns_total; ++i) {
    const std::uint64_t mask = reverse_order ? rep.patterns_total - 1 - i : i;
    for (std::size_t f = 0; f < free.size(); ++f) diag[free[f].layer](free[f].neuron) = (mask >> f) & 1u ? 1.0 : 0.0;
    Matrix jac = net.layer(0).weight;
    for (std::size_t h = 0; h < net.num_hidden(); ++h) {
      jac = (net.layer(h + 1).weight * (diag[h].asDiagonal() * jac)).eval();
    }
    rep.upper_bound = std::max(rep.upper_bound, induced_inf_norm(jac));
    ++rep.patterns_feasible;
  }
  return rep;
}

class NearKink : public std::runtime_error {
public:
  NearKink(std::size_t layer, std::size_t neuron, double z)
      : std::runtime_error("finite difference refused: neuron " + std::to_string(neuron) + " of hidden layer " +
                           std::to_string(layer) + " has pre-activation " + std::to_string(z) + " too close to 0"),
        layer_(layer),
        neuron_(neuron) {}
  std::size_t layer() const noexcept { return layer_; }
  std::size_t neuron() const noexcept { return neuron_; }

private:
  std::size_t layer_;
  std::size_t neuron_;
};

/// Max entrywise |central difference - jacobian_at| at x.
inline double finite_difference_check(const Network& net, const Vector& x, double step = 1e-6) {
  const auto fwd = forward(net, x);
  for (std::size_t h = 0; h < fwd.preactivations.size(); ++h) {
    const auto& z = fwd.preactivations[h];
    for (Eigen::Index j = 0; j < z.size(); ++j) {
      if (std::abs(z(j)) <= 10.0 * step) throw NearKink(h, static_cast<std::size_t>(j), z(j));
    }
  }
  const Matrix analytic = jacobian_at(net, x);
  double worst = 0.0;
  Vector xp = x;
  Vector xm = x;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    xp(k) = x(k) + step;
    xm(k) = x(k) - step;
    const Vector col = (forward(net, xp).output - forward(net, xm).output) / (2.0 * step);
    worst = std::max(worst, (col - analytic.col(k)).cwiseAbs().maxCoeff());
    xp(k) = x(k);
    xm(k) = x(k);
  }
  return worst;
}

// -- RecurJac ---------------------------------------------------------------

namespace recurjac {

/// Bounds on the Clarke gradient of each neuron: d in [lo, hi].
struct GradRange {
  Vector lo;
  Vector hi;
};

inline GradRange grad_range(const LayerIntervals& li) {
  GradRange g{Vector::Zero(li.l.size()), Vector::Zero(li.l.size())};
  for (Eigen::Index j = 0; j < li.l.size(); ++j) {
    g.lo(j) = li.l(j) > 0.0 ? 1.0 : 0.0;
    g.hi(j) = li.u(j) < 0.0 ? 0.0 : 1.0;
  }
  return g;
}

/// Upper bound on J_k . a, with J_k the Jacobian of one output row w.r.t.
/// the input of affine layer k. Jlo/Jhi[k+1] must already be known.
///   v = W_k a; per neuron j, with [L, U] the bounds on entry j of J_{k+1}:
///     J_{k+1} constant (last layer): exact, d picked by the sign of J v.
///     L >= 0 or U <= 0: sign of J v fixed, d picked by it, J kept symbolic and
///       merged into the next layer's coefficients.
///     otherwise: interval product, U*d_hi*v if v > 0 else L*d_hi*v.
inline double upper(const Network& net, const std::vector<GradRange>& grad, const std::vector<Vector>& Jlo,
                    const std::vector<Vector>& Jhi, std::size_t k, const Vector& a) {
  const std::size_t n = net.num_layers();
  if (k == n - 1) return Jhi[k].dot(a);  // constant row
  const Vector v = net.layer(k).weight * a;
  const auto& g = grad[k];
  Vector next = Vector::Zero(v.size());
  double constant = 0.0;
  const bool next_is_constant = k + 2 == n;
  for (Eigen::Index j = 0; j < v.size(); ++j) {
    const double L = Jlo[k + 1](j);
    const double U = Jhi[k + 1](j);
    if (next_is_constant) {
      const double w = U;  // == L
      constant += w * v(j) > 0.0 ? w * v(j) * g.hi(j) : w * v(j) * g.lo(j);
    } else if (L >= 0.0) {
      next(j) = v(j) > 0.0 ? g.hi(j) * v(j) : g.lo(j) * v(j);
    } else if (U <= 0.0) {
      next(j) = v(j) > 0.0 ? g.lo(j) * v(j) : g.hi(j) * v(j);
    } else {
      constant += v(j) > 0.0 ? U * g.hi(j) * v(j) : L * g.hi(j) * v(j);
    }
  }
  if (next_is_constant) return constant;
  return upper(net, grad, Jlo, Jhi, k + 1, next) + constant;
}

inline double lower(const Network& net, const std::vector<GradRange>& grad, const std::vector<Vector>& Jlo,
                    const std::vector<Vector>& Jhi, std::size_t k, const Vector& a) {
  return -upper(net, grad, Jlo, Jhi, k, -a);
}

struct RowResult {
  std::vector<Vector> Jlo;
  std::vector<Vector> Jhi;
  double bound = 0.0;
};

/// Closed form for the Jacobian w.r.t. the input of the last hidden layer:
///   U = (W_n+ * d_hi + W_n- * d_lo) W_{n-1}+ + (W_n+ * d_lo + W_n- * d_hi) W_{n-1}-
///   L = (W_n+ * d_lo + W_n- * d_hi) W_{n-1}+ + (W_n+ * d_hi + W_n- * d_lo) W_{n-1}-
inline void second_last_closed_form(const Vector& w_row, const GradRange& g, const Matrix& w_prev, Vector& lo,
                                    Vector& hi) {
  const Vector wp = w_row.cwiseMax(0.0);
  const Vector wn = w_row.cwiseMin(0.0);
  const Vector big = wp.cwiseProduct(g.hi) + wn.cwiseProduct(g.lo);
  const Vector small = wp.cwiseProduct(g.lo) + wn.cwiseProduct(g.hi);
  const Matrix pp = w_prev.cwiseMax(0.0);
  const Matrix pn = w_prev.cwiseMin(0.0);
  hi = pp.transpose() * big + pn.transpose() * small;
  lo = pp.transpose() * small + pn.transpose() * big;
}

inline RowResult row(const Network& net, const std::vector<LayerIntervals>& intervals, std::size_t r) {
  const std::size_t n = net.num_layers();
  RowResult out;
  out.Jlo.resize(n);
  out.Jhi.resize(n);
  std::vector<GradRange> grad;
  for (const auto& li : intervals) grad.push_back(grad_range(li));

  const Vector w_row = net.layer(n - 1).weight.row(static_cast<Eigen::Index>(r)).transpose();
  out.Jlo[n - 1] = w_row;
  out.Jhi[n - 1] = w_row;
  if (n >= 2) second_last_closed_form(w_row, grad[n - 2], net.layer(n - 2).weight, out.Jlo[n - 2], out.Jhi[n - 2]);
  for (std::size_t k = n >= 2 ? n - 2 : 0; k-- > 0;) {
    const std::size_t width = net.layer(k).in_dim();
    out.Jlo[k] = Vector(static_cast<Eigen::Index>(width));
    out.Jhi[k] = Vector(static_cast<Eigen::Index>(width));
    for (std::size_t m = 0; m < width; ++m) {
      const Vector e = Vector::Unit(static_cast<Eigen::Index>(width), static_cast<Eigen::Index>(m));
      out.Jhi[k](static_cast<Eigen::Index>(m)) = upper(net, grad, out.Jlo, out.Jhi, k, e);
      out.Jlo[k](static_cast<Eigen::Index>(m)) = lower(net, grad, out.Jlo, out.Jhi, k, e);
    }
  }

  // chord of |.| per entry of J_1, pushed through the same recursion
  const Vector& lo = out.Jlo[0];
  const Vector& hi = out.Jhi[0];
  Vector a = Vector::Zero(lo.size());
  double c = 0.0;
  for (Eigen::Index j = 0; j < lo.size(); ++j) {
    if (hi(j) - lo(j) < 1e-12) {
      c += std::max(std::abs(lo(j)), std::abs(hi(j)));
    } else {
      a(j) = (std::abs(hi(j)) - std::abs(lo(j))) / (hi(j) - lo(j));
      c += std::abs(lo(j)) - a(j) * lo(j);
    }
  }
  out.bound = std::max(0.0, upper(net, grad, out.Jlo, out.Jhi, 0, a) + c);
  return out;
}

}  // namespace recurjac

/// Lipschitz bound of the RecurJac recursion, max over output rows.
inline double recurjac_reference(const Network& net, const BoxDomain& box) {
  const auto intervals = preactivation_bounds(net, box);
  double best = 0.0;
  for (std::size_t r = 0; r < net.output_dim(); ++r) best = std::max(best, recurjac::row(net, *intervals, r).bound);
  return best;
}

}  // namespace lipcert
