#include <catch2/catch.hpp>

#include <random>

#include "support.hpp"

using namespace lipcert;
using namespace testing_support;

namespace {

using DS = DeltaState;

Network all_stable() {
  return Network({{mat({{1, 1}, {1, -1}}), vec({10, 10})}, {mat({{2, 1}}), vec({0})}});
}

double line(double slope, double intercept, double x) { return slope * x + intercept; }

}  // namespace

TEST_CASE("delta states") {
  CHECK(delta_state(-2, -1) == DS::zero);
  CHECK(delta_state(1, 2) == DS::one);
  CHECK(delta_state(-1, 1) == DS::unstable);
  CHECK(delta_state(0, 1) == DS::unstable);
  CHECK(delta_state(-1, 0) == DS::unstable);
}

TEST_CASE("abs norm relaxation examples") {
  auto r = abs_norm_relaxation(vec({-1}), vec({1.5}));
  CHECK(r.coeff(0) == Approx(0.2));
  CHECK(r.bias == Approx(1.2));
  CHECK(line(r.coeff(0), r.bias, -1) == Approx(1.0));
  CHECK(line(r.coeff(0), r.bias, 1.5) == Approx(1.5));

  r = abs_norm_relaxation(vec({-2}), vec({-2}));
  CHECK(r.coeff(0) == 0.0);
  CHECK(r.bias == 2.0);

  r = abs_norm_relaxation(vec({0}), vec({3}));
  CHECK(r.coeff(0) == 1.0);
  CHECK(r.bias == 0.0);

  // bias sums over entries
  r = abs_norm_relaxation(vec({-1, -2}), vec({1.5, -2}));
  CHECK(r.bias == Approx(3.2));
  CHECK_THROWS(abs_norm_relaxation(vec({1}), vec({0})));
}

TEST_CASE("abs norm relaxation dominates |J| on a grid") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-4, 4);
  for (int t = 0; t < 10000; ++t) {
    double a = u(rng), b = u(rng);
    if (a > b) std::swap(a, b);
    const auto r = abs_norm_relaxation(vec({a}), vec({b}));
    for (int k = 0; k <= 50; ++k) {
      const double J = a + (b - a) * k / 50.0;
      REQUIRE(line(r.coeff(0), r.bias, J) - std::abs(J) >= -1e-12);
    }
    if (b - a >= kDegenerateWidth) {
      CHECK(std::abs(line(r.coeff(0), r.bias, a) - std::abs(a)) <= 1e-12);
      CHECK(std::abs(line(r.coeff(0), r.bias, b) - std::abs(b)) <= 1e-12);
    }
  }
}

TEST_CASE("clarke relaxation examples") {
  auto r = clarke_relaxation(vec({-1.5, 0.2, -2.0}), vec({1.5, 1.0, -0.5}), {DS::unstable, DS::unstable, DS::unstable});
  CHECK(r.upper_slope(0) == Approx(0.5));
  CHECK(r.upper_intercept(0) == Approx(0.75));
  CHECK(r.lower_slope(0) == Approx(0.5));
  CHECK(r.lower_intercept(0) == Approx(-0.75));
  // L >= 0: lower 0, upper J
  CHECK(r.lower_slope(1) == 0.0);
  CHECK(r.lower_intercept(1) == 0.0);
  CHECK(r.upper_slope(1) == 1.0);
  CHECK(r.upper_intercept(1) == 0.0);
  // U <= 0: lower J, upper 0
  CHECK(r.lower_slope(2) == 1.0);
  CHECK(r.lower_intercept(2) == 0.0);
  CHECK(r.upper_slope(2) == 0.0);
  CHECK(r.upper_intercept(2) == 0.0);

  auto fixed = clarke_relaxation(vec({-1, -1}), vec({1, 1}), {DS::zero, DS::one});
  CHECK(fixed.upper_slope(0) == 0.0);
  CHECK(fixed.upper_intercept(0) == 0.0);
  CHECK(fixed.lower_slope(1) == 1.0);
  CHECK(fixed.upper_slope(1) == 1.0);

  auto deg = clarke_relaxation(vec({0.5}), vec({0.5}), {DS::unstable});
  CHECK(deg.upper_slope(0) == 0.0);
  CHECK(deg.upper_intercept(0) == 0.5);
  CHECK(deg.lower_intercept(0) == 0.0);

  CHECK_THROWS(clarke_relaxation(vec({1}), vec({0}), {DS::unstable}));
  CHECK_THROWS_AS(clarke_relaxation(vec({0}), vec({1}), {}), DimensionError);
}

TEST_CASE("clarke relaxation is sound and touches at the endpoints") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-3, 3), unit(0, 1);
  for (int t = 0; t < 20000; ++t) {
    double a = u(rng), b = u(rng);
    if (a > b) std::swap(a, b);
    if (b - a < kDegenerateWidth) continue;
    const auto r = clarke_relaxation(vec({a}), vec({b}), {DS::unstable});
    const double J = a + (b - a) * unit(rng);
    const double d = unit(rng);
    REQUIRE(J * d - line(r.lower_slope(0), r.lower_intercept(0), J) >= -1e-12);
    REQUIRE(line(r.upper_slope(0), r.upper_intercept(0), J) - J * d >= -1e-12);
    for (double e : {a, b}) {
      CHECK(std::abs(line(r.upper_slope(0), r.upper_intercept(0), e) - std::max(e, 0.0)) <= 1e-12);
      CHECK(std::abs(line(r.lower_slope(0), r.lower_intercept(0), e) - std::min(e, 0.0)) <= 1e-12);
    }
  }
}

TEST_CASE("a line below the upper relaxation somewhere is unsound") {
  // any line through points strictly below the chord of relu misses some J*d
  for (auto [a, b] : {std::pair{-1.5, 1.5}, std::pair{-0.3, 2.0}, std::pair{-4.0, 0.5}}) {
    const auto r = clarke_relaxation(vec({a}), vec({b}), {DS::unstable});
    for (int k = 1; k < 20; ++k) {
      const double J0 = a + (b - a) * k / 20.0;
      // rotate the upper line about (J0, upper(J0) - 1e-3)
      for (double tilt : {-0.5, 0.0, 0.5}) {
        const double s = r.upper_slope(0) + tilt;
        const double t = line(r.upper_slope(0), r.upper_intercept(0), J0) - 1e-3 - s * J0;
        bool violated = false;
        for (double e : {a, b}) {
          if (line(s, t, e) < std::max(e, 0.0) - 1e-15) violated = true;
        }
        CHECK(violated);
      }
    }
  }
}

TEST_CASE("interval clarke relaxation uses constants only where the sign is undetermined") {
  const std::vector<DS> d{DS::unstable, DS::one, DS::zero, DS::unstable};
  const Vector L = vec({-1, -2, -1, 0.5});
  const Vector U = vec({2, 3, 1, 1});
  auto r = interval_clarke_relaxation(L, U, d, false);
  CHECK(r.upper_slope(0) == 0.0);
  CHECK(r.upper_intercept(0) == 2.0);
  CHECK(r.lower_intercept(0) == -1.0);
  CHECK(r.upper_intercept(1) == 3.0);
  CHECK(r.lower_intercept(1) == -2.0);
  CHECK(r.upper_intercept(2) == 0.0);
  CHECK(r.lower_intercept(2) == 0.0);
  CHECK(r.upper_slope(3) == 1.0);  // sign known: linear relaxation kept

  auto last = interval_clarke_relaxation(L, U, d, true);
  auto full = clarke_relaxation(L, U, d);
  CHECK(last.upper_slope == full.upper_slope);
  CHECK(last.upper_intercept == full.upper_intercept);
}

TEST_CASE("jacobian backward step examples") {
  const AffineLayer w{mat({{1, 2}, {3, 4}}), vec({0, 0})};
  LinearForm c{mat({{1, -1}}), vec({0})};
  auto ones = clarke_relaxation(vec({1, 1}), vec({2, 2}), {DS::one, DS::one});
  auto out = jacobian_backward_step(c, w, ones, Direction::upper);
  // coeff becomes (W c) laid out along the next layer
  CHECK(out.coeff.isApprox(mat({{-1, -1}})));
  CHECK(out.bias(0) == 0.0);

  auto zeros = clarke_relaxation(vec({1, 1}), vec({2, 2}), {DS::zero, DS::zero});
  out = jacobian_backward_step(c, w, zeros, Direction::upper);
  CHECK(out.coeff.isZero());

  const AffineLayer one{mat({{1}}), vec({0})};
  const auto r = clarke_relaxation(vec({-1.5}), vec({1.5}), {DS::unstable});
  out = jacobian_backward_step({mat({{1}}), vec({0})}, one, r, Direction::upper);
  CHECK(out.coeff(0, 0) == Approx(0.5));
  CHECK(out.bias(0) == Approx(0.75));
  out = jacobian_backward_step({mat({{1}}), vec({0})}, one, r, Direction::lower);
  CHECK(out.bias(0) == Approx(-0.75));

  CHECK_THROWS_AS(jacobian_backward_step({mat({{1, 2, 3}}), vec({0})}, w, ones, Direction::upper), DimensionError);
}

TEST_CASE("jacobian interval bounds examples") {
  const auto net = all_stable();
  const auto b = *preactivation_bounds(net, BoxDomain::ball(vec({0, 0}), 0.01));
  auto jac = jacobian_interval_bounds(net, b, 0);
  CHECK(jac[0].L.isApprox(vec({3, 1})));
  CHECK(jac[0].U.isApprox(vec({3, 1})));

  Network single({{mat({{1}}), vec({0})}, {mat({{3}}), vec({0})}});
  jac = jacobian_interval_bounds(single, *preactivation_bounds(single, {vec({-1}), vec({1})}), 0);
  CHECK(jac[1].L(0) == 3.0);
  CHECK(jac[0].L(0) == 0.0);
  CHECK(jac[0].U(0) == 3.0);

  Network zero_row({{mat({{1, 2}}), vec({0})}, {mat({{0}}), vec({0})}});
  jac = jacobian_interval_bounds(zero_row, *preactivation_bounds(zero_row, BoxDomain::ball(vec({0, 0}), 1)), 0);
  for (const auto& j : jac) {
    CHECK(j.L.isZero());
    CHECK(j.U.isZero());
  }
}

TEST_CASE("lipschitz bound examples") {
  const auto net = all_stable();
  const auto box = BoxDomain::ball(vec({0, 0}), 0.01);
  CHECK(lipschitz_upper_bound(net, box, BoundMode::linear)->bound == Approx(4.0));
  CHECK(lipschitz_upper_bound(net, box, BoundMode::interval)->bound == Approx(4.0));
  CHECK(lipschitz_upper_bound(net, box, BoundMode::naive)->bound == Approx(6.0));

  const auto toy = toy_unstable();
  CHECK(lipschitz_upper_bound(toy, {vec({-1}), vec({1})})->bound == Approx(1.0));

  Network zero({{Matrix::Zero(3, 2), Vector::Zero(3)}, {Matrix::Zero(2, 3), Vector::Zero(2)}});
  for (auto m : {BoundMode::linear, BoundMode::interval, BoundMode::naive}) {
    CHECK(lipschitz_upper_bound(zero, BoxDomain::ball(vec({0, 0}), 1), m)->bound == 0.0);
  }

  Network flat({{mat({{1, -2}, {3, 4}}), vec({0, 0})}});
  CHECK(naive_upper_bound(flat) == 7.0);
  CHECK(lipschitz_upper_bound(flat, BoxDomain::ball(vec({0, 0}), 1), BoundMode::naive)->bound == 7.0);
  CHECK(lipschitz_upper_bound(flat, BoxDomain::ball(vec({0, 0}), 1), BoundMode::linear)->bound == 7.0);

  CHECK_THROWS_AS(lipschitz_upper_bound(flat, BoxDomain::ball(vec({0}), 1)), DimensionError);
}

TEST_CASE("bound report aggregates rows") {
  const auto net = random_net(3, 4, {8, 8}, 3);
  const auto r = *lipschitz_upper_bound(net, BoxDomain::ball(random_point(4, 4), 0.2));
  REQUIRE(r.rows.size() == 3);
  double m = 0;
  for (const auto& row : r.rows) {
    CHECK(row.bound >= 0.0);
    m = std::max(m, row.bound);
  }
  CHECK(r.bound == m);
  CHECK(r.rows[r.argmax_row()].bound == m);
  CHECK(parse_bound_mode("interval") == BoundMode::interval);
  CHECK_FALSE(parse_bound_mode("lp"));
}

TEST_CASE("sampled jacobians stay inside entry bounds and below the norm bound") {
  std::mt19937_64 rng(21);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto net = random_net(seed, 5, {12, 12}, 3);
    const auto box = BoxDomain::ball(random_point(5, seed + 100), 0.1 + 0.1 * (seed % 5));
    const auto [L, U] = jacobian_entry_bounds(net, box);
    const double linear = lipschitz_upper_bound(net, box)->bound;
    const double interval = lipschitz_upper_bound(net, box, BoundMode::interval)->bound;
    for (int s = 0; s < 200; ++s) {
      Vector x = box.lo;
      for (Eigen::Index i = 0; i < x.size(); ++i) {
        x(i) += std::uniform_real_distribution<double>(0, 1)(rng) * (box.hi(i) - box.lo(i));
      }
      for (auto rule : {ZeroRule::one, ZeroRule::zero}) {
        const Matrix J = jacobian_at(net, x, rule);
        REQUIRE((J - L).minCoeff() >= -1e-9);
        REQUIRE((U - J).minCoeff() >= -1e-9);
        REQUIRE(induced_inf_norm(J) <= linear + 1e-9);
        REQUIRE(induced_inf_norm(J) <= interval + 1e-9);
      }
    }
  }
}

TEST_CASE("dominance chain on random nets") {
  int strict = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto net = random_net(seed, 6, {16, 16}, 4);
    const auto box = BoxDomain::ball(random_point(6, seed + 7), 0.1);
    const double linear = lipschitz_upper_bound(net, box, BoundMode::linear)->bound;
    const double interval = lipschitz_upper_bound(net, box, BoundMode::interval)->bound;
    const double naive = lipschitz_upper_bound(net, box, BoundMode::naive)->bound;
    CHECK(linear <= interval + 1e-9);
    CHECK(interval <= naive + 1e-9);
    if (linear < naive) ++strict;
  }
  CHECK(strict >= 180);
}

TEST_CASE("entry bounds for sign-structured nets") {
  const auto stable = all_stable();
  const auto [L, U] = jacobian_entry_bounds(stable, BoxDomain::ball(vec({0, 0}), 0.01));
  CHECK(L.isApprox(weight_product(stable)));
  CHECK(U.isApprox(weight_product(stable)));

  auto layers = random_net(5, 4, {8, 8}, 2).layers();
  for (auto& l : layers) l.weight = l.weight.cwiseAbs();
  const Network pos(layers);
  const auto box = BoxDomain::ball(random_point(4, 1), 0.5);
  const auto [PL, PU] = jacobian_entry_bounds(pos, box);
  CHECK(PL.minCoeff() >= 0.0);

  const auto neg = negate_last(pos);
  const auto [NL, NU] = jacobian_entry_bounds(neg, box);
  CHECK((NL + PU).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((NU + PL).cwiseAbs().maxCoeff() < 1e-12);
}
