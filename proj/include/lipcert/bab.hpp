#pragma once

// Branch-and-bound over unstable ReLU neurons. Each domain fixes the sign of
// some neurons; fixing a sign turns that neuron's Clarke gradient into a
// constant and lets the Jacobian bounds tighten.

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <limits>
#include <optional>
#include <queue>
#include <stdexcept>
#include <utility>
#include <vector>

#include "lipcert/forward_bounds.hpp"
#include "lipcert/jacobian_bounds.hpp"

namespace lipcert {

struct BabConfig {
  std::size_t batch_size = 8;
  double time_limit = 60.0;  // seconds
  std::size_t max_domains = 200000;
  double tilde_eps = kDefaultTildeEps;
  bool record_domains = false;

  void validate() const {
    if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
    if (!(time_limit >= 0.0)) throw std::invalid_argument("time limit must be non-negative");
    if (max_domains == 0) throw std::invalid_argument("max_domains must be positive");
    if (!(tilde_eps > 0.0)) throw std::invalid_argument("tilde_eps must be positive");
  }
};

struct BabDomain {
  SignConstraints constraints;
  double bound = std::numeric_limits<double>::infinity();
  std::size_t depth = 0;
  // state of the most recent bound computation
  std::vector<LayerIntervals> intervals;
  BoundReport report;
};

struct ExploredDomain {
  SignConstraints constraints;
  double bound = 0.0;
};

struct BabResult {
  double bound = 0.0;
  double initial_bound = 0.0;
  std::size_t domains_explored = 0;
  std::size_t domains_pruned = 0;
  std::size_t branches = 0;
  std::vector<double> history;
  bool complete = false;
  double runtime_s = 0.0;
  std::vector<ExploredDomain> explored;  // filled when BabConfig::record_domains
};

/// Estimated gain from branching `neuron`: half the squared width of the
/// Jacobian interval feeding its Clarke node, times the magnitude of the
/// coefficient that node receives in the norm bound of the domain's loosest row.
inline double branch_score(const Network& net, const BabDomain& dom, const NeuronRef& neuron) {
  if (neuron.layer >= net.num_hidden() || neuron.neuron >= net.hidden_width(neuron.layer)) {
    throw std::out_of_range("branch_score: neuron out of range");
  }
  const auto j = static_cast<Eigen::Index>(neuron.neuron);
  const auto& li = dom.intervals.at(neuron.layer);
  if (delta_state(li.l(j), li.u(j)) != DeltaState::unstable) {
    throw std::invalid_argument("branch_score: neuron is not unstable");
  }
  const auto& row = dom.report.rows.at(dom.report.argmax_row());
  const auto& next = row.jac.at(neuron.layer + 1);
  const double gap = next.U(j) - next.L(j);
  const Vector folded = net.layer(neuron.layer).weight * row.top_coeff.at(neuron.layer);
  return 0.5 * gap * gap * std::abs(folded(j));
}

/// Highest-scoring unstable neuron; ties go to the lowest (layer, neuron).
inline std::optional<NeuronRef> pick_branch_neuron(const Network& net, const BabDomain& dom) {
  std::optional<NeuronRef> best;
  double best_score = -1.0;
  for (std::size_t h = 0; h < dom.intervals.size(); ++h) {
    const auto& li = dom.intervals[h];
    for (Eigen::Index j = 0; j < li.l.size(); ++j) {
      if (delta_state(li.l(j), li.u(j)) != DeltaState::unstable) continue;
      const NeuronRef ref{h, static_cast<std::size_t>(j)};
      const double s = branch_score(net, dom, ref);
      if (s > best_score) {
        best_score = s;
        best = ref;
      }
    }
  }
  return best;
}

/// Children with the neuron fixed negative and positive. Bounds are left at
/// the parent's value until `bound_domain` recomputes them.
inline std::pair<BabDomain, BabDomain> split_domain(const BabDomain& dom, const NeuronRef& neuron) {
  if (dom.constraints.count(neuron) != 0) throw std::invalid_argument("split_domain: neuron already constrained");
  const auto& li = dom.intervals.at(neuron.layer);
  const auto j = static_cast<Eigen::Index>(neuron.neuron);
  if (j >= li.l.size()) throw std::out_of_range("split_domain: neuron out of range");
  if (delta_state(li.l(j), li.u(j)) != DeltaState::unstable) {
    throw std::invalid_argument("split_domain: neuron is not unstable");
  }
  std::pair<BabDomain, BabDomain> kids;
  for (auto* kid : {&kids.first, &kids.second}) {
    kid->constraints = dom.constraints;
    kid->bound = dom.bound;
    kid->depth = dom.depth + 1;
  }
  kids.first.constraints[neuron] = Sign::negative;
  kids.second.constraints[neuron] = Sign::positive;
  return kids;
}

/// Recompute a child's intervals and bound. Layers above the branched one
/// are reused from the parent, deeper layers are recomputed and intersected
/// with the parent's, and the bound never exceeds the parent's (the child's
/// region is a subset). Returns false when the child is infeasible.
inline bool bound_domain(const Network& net, const BoxDomain& box, BabDomain& child,
                         const std::vector<LayerIntervals>& parent_intervals, double parent_bound,
                         std::size_t branched_layer, double tilde_eps) {
  ForwardBoundOptions opts;
  opts.tilde_eps = tilde_eps;
  auto intervals = preactivation_bounds(net, box, child.constraints, opts, &parent_intervals, branched_layer + 1);
  if (!intervals) return false;
  child.intervals = *intervals;
  child.report = bound_from_intervals(net, std::move(*intervals), BoundMode::linear);
  child.bound = std::min(child.report.bound, parent_bound);
  return true;
}

inline BabResult run_bab(const Network& net, const BoxDomain& box, const BabConfig& cfg = {}) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };

  BabResult result;
  ForwardBoundOptions opts;
  opts.tilde_eps = cfg.tilde_eps;

  BabDomain root;
  {
    auto intervals = preactivation_bounds(net, box, {}, opts);
    root.intervals = *intervals;
    root.report = bound_from_intervals(net, std::move(*intervals), BoundMode::linear);
    root.bound = root.report.bound;
  }
  result.initial_bound = root.bound;
  result.domains_explored = 1;
  if (cfg.record_domains) result.explored.push_back({root.constraints, root.bound});

  struct Entry {
    double bound;
    std::size_t seq;
    std::size_t slot;
  };
  auto looser = [](const Entry& a, const Entry& b) {
    // max-heap on bound, earlier insertion first among equals
    if (a.bound != b.bound) return a.bound < b.bound;
    return a.seq > b.seq;
  };
  std::priority_queue<Entry, std::vector<Entry>, decltype(looser)> pool(looser);
  std::vector<std::optional<BabDomain>> storage;
  std::vector<std::size_t> free_slots;
  std::size_t seq = 0;
  double leaf_max = 0.0;

  auto push = [&](BabDomain&& d) {
    std::size_t slot;
    if (!free_slots.empty()) {
      slot = free_slots.back();
      free_slots.pop_back();
      storage[slot] = std::move(d);
    } else {
      slot = storage.size();
      storage.emplace_back(std::move(d));
    }
    pool.push({storage[slot]->bound, seq++, slot});
  };
  auto has_unstable = [](const BabDomain& d) { return count_unstable(d.intervals) > 0; };
  auto global_bound = [&] { return std::max(leaf_max, pool.empty() ? 0.0 : pool.top().bound); };

  if (has_unstable(root)) {
    push(std::move(root));
  } else {
    leaf_max = root.bound;
  }
  result.history.push_back(global_bound());

  while (!pool.empty()) {
    if (elapsed() >= cfg.time_limit || result.domains_explored >= cfg.max_domains) break;

    std::vector<BabDomain> batch;
    while (!pool.empty() && batch.size() < cfg.batch_size) {
      const auto e = pool.top();
      pool.pop();
      batch.push_back(std::move(*storage[e.slot]));
      storage[e.slot].reset();
      free_slots.push_back(e.slot);
    }

    for (auto& dom : batch) {
      const auto neuron = pick_branch_neuron(net, dom);
      if (!neuron) {
        leaf_max = std::max(leaf_max, dom.bound);
        continue;
      }
      auto [neg, pos] = split_domain(dom, *neuron);
      ++result.branches;
      bool any_feasible = false;
      for (auto* kid : {&neg, &pos}) {
        ++result.domains_explored;
        if (!bound_domain(net, box, *kid, dom.intervals, dom.bound, neuron->layer, cfg.tilde_eps)) {
          ++result.domains_pruned;
          continue;
        }
        any_feasible = true;
        if (cfg.record_domains) result.explored.push_back({kid->constraints, kid->bound});
        if (has_unstable(*kid)) {
          push(std::move(*kid));
        } else {
          leaf_max = std::max(leaf_max, kid->bound);
        }
      }
      // both sides empty only when the neuron lies within (-tilde_eps, tilde_eps);
      // keep the parent's bound for that sliver
      if (!any_feasible) leaf_max = std::max(leaf_max, dom.bound);
    }
    result.history.push_back(global_bound());
  }

  result.complete = pool.empty();
  result.bound = result.history.back();
  result.runtime_s = elapsed();
  return result;
}

}  // namespace lipcert
