#pragma once

// Command implementations behind the lipcert CLI. Each command returns an
// OutputRecord whose JSON form is stable across commands: every record has
// "schema", "command", "model", "model_hash", "domain", "mode", "bound",
// "row_bounds" and "runtime_s".

#include <chrono>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lipcert/bab.hpp"
#include "lipcert/jacobian_bounds.hpp"
#include "lipcert/model_io.hpp"
#include "lipcert/oracle.hpp"

namespace lipcert {

/// Bad user input; the CLI maps it to exit code 2.
class InputError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitInputError = 2;
inline constexpr int kExitInvariantViolation = 3;

inline constexpr double kDominanceTol = 1e-9;

/// Either center + eps or an explicit lo/hi box.
struct DomainSpec {
  std::vector<double> center;
  std::optional<double> eps;
  std::vector<double> lo;
  std::vector<double> hi;

  BoxDomain to_box(std::size_t dim) const {
    const bool ball = !center.empty() || eps.has_value();
    const bool box = !lo.empty() || !hi.empty();
    if (ball == box) throw InputError("give exactly one domain: --center with --eps, or --lo with --hi");
    auto expand = [dim](const std::vector<double>& v, const char* name) {
      if (v.size() == 1) return Vector::Constant(static_cast<Eigen::Index>(dim), v[0]).eval();
      if (v.size() != dim) {
        throw InputError(std::string(name) + " has " + std::to_string(v.size()) + " values, model input has " +
                         std::to_string(dim));
      }
      return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())).eval();
    };
    if (ball) {
      if (center.empty() || !eps) throw InputError("--center and --eps must be given together");
      if (!(*eps >= 0.0) || !std::isfinite(*eps)) throw InputError("--eps must be finite and non-negative");
      return BoxDomain::ball(expand(center, "--center"), *eps);
    }
    if (lo.empty() || hi.empty()) throw InputError("--lo and --hi must be given together");
    BoxDomain b{expand(lo, "--lo"), expand(hi, "--hi")};
    try {
      b.validate();
    } catch (const std::exception& e) {
      throw InputError(e.what());
    }
    return b;
  }
};

enum class OutputFormat { json, csv, table };

struct RunConfig {
  std::string model_path;
  DomainSpec domain;
  BoundMode mode = BoundMode::linear;
  IntermediateMethod intermediate = IntermediateMethod::linear;
  BabConfig bab;
  std::size_t samples = 1000;
  std::uint64_t seed = 0;
  OutputFormat format = OutputFormat::json;
  bool compare_with_bab = false;
  // monotonicity
  std::vector<double> range_lo;
  std::vector<double> range_hi;
  std::vector<double> baseline;
  std::string baselines_path;
};

struct OutputRecord {
  nlohmann::json data;
  bool invariant_violation = false;

  int exit_code() const { return invariant_violation ? kExitInvariantViolation : kExitOk; }
};

namespace detail {

struct LoadedModel {
  Network net;
  std::string hash;
};

inline LoadedModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open model file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string bytes = buf.str();
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(bytes);
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError("malformed JSON in '" + path + "': " + e.what());
  }
  try {
    return {network_from_json(doc), fnv1a_hex(bytes)};
  } catch (const ModelError& e) {
    throw InputError(e.what());
  }
}

inline nlohmann::json to_json(const Vector& v) { return std::vector<double>(v.begin(), v.end()); }

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline nlohmann::json base_record(const std::string& command, const RunConfig& cfg, const LoadedModel& m,
                                  const BoxDomain& box, const std::string& mode) {
  nlohmann::json j;
  j["schema"] = 1;
  j["command"] = command;
  j["model"] = cfg.model_path;
  j["model_hash"] = m.hash;
  j["domain"] = {{"lo", to_json(box.lo)}, {"hi", to_json(box.hi)}};
  if (cfg.domain.eps) j["domain"]["eps"] = *cfg.domain.eps;
  j["mode"] = mode;
  j["bound"] = 0.0;
  j["row_bounds"] = nlohmann::json::array();
  j["runtime_s"] = 0.0;
  return j;
}

inline nlohmann::json row_bounds(const BoundReport& r) {
  auto a = nlohmann::json::array();
  for (const auto& row : r.rows) a.push_back(row.bound);
  return a;
}

inline nlohmann::json bab_summary(const BabResult& r) {
  return {{"bound", r.bound},
          {"initial_bound", r.initial_bound},
          {"complete", r.complete},
          {"domains_explored", r.domains_explored},
          {"domains_pruned", r.domains_pruned},
          {"branches", r.branches},
          {"history", r.history},
          {"runtime_s", r.runtime_s}};
}

inline std::vector<std::vector<double>> read_baselines(const std::string& path, std::size_t dim) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open baselines file '" + path + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError("malformed baselines file: " + std::string(e.what()));
  }
  if (doc.is_object() && doc.contains("baselines")) doc = doc["baselines"];
  if (!doc.is_array()) throw InputError("baselines file must hold an array of input vectors");
  std::vector<std::vector<double>> out;
  for (const auto& row : doc) {
    if (!row.is_array() || row.size() != dim) {
      throw InputError("baseline dimension mismatch: expected " + std::to_string(dim) + " values");
    }
    std::vector<double> v;
    for (const auto& x : row) {
      if (!x.is_number()) throw InputError("baselines must be numeric");
      v.push_back(x.get<double>());
    }
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace detail

inline OutputRecord cmd_bound(const RunConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto m = detail::load_model(cfg.model_path);
  const auto box = cfg.domain.to_box(m.net.input_dim());
  ForwardBoundOptions opts;
  opts.method = cfg.intermediate;
  auto report = lipschitz_upper_bound(m.net, box, cfg.mode, {}, opts);
  OutputRecord out;
  out.data = detail::base_record("bound", cfg, m, box, to_string(cfg.mode));
  out.data["bound"] = report->bound;
  out.data["row_bounds"] = detail::row_bounds(*report);
  out.data["unstable_neurons"] = count_unstable(report->preactivation);
  out.data["intermediate"] = cfg.intermediate == IntermediateMethod::linear ? "linear" : "interval";
  out.data["runtime_s"] = detail::seconds_since(t0);
  return out;
}

inline OutputRecord cmd_bab(const RunConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto m = detail::load_model(cfg.model_path);
  const auto box = cfg.domain.to_box(m.net.input_dim());
  BabResult r;
  try {
    r = run_bab(m.net, box, cfg.bab);
  } catch (const std::invalid_argument& e) {
    throw InputError(e.what());
  }
  OutputRecord out;
  out.data = detail::base_record("bab", cfg, m, box, "bab");
  out.data["bound"] = r.bound;
  out.data["bab"] = detail::bab_summary(r);
  out.data["runtime_s"] = detail::seconds_since(t0);
  return out;
}

inline OutputRecord cmd_oracle(const RunConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto m = detail::load_model(cfg.model_path);
  const auto box = cfg.domain.to_box(m.net.input_dim());
  const auto linear = lipschitz_upper_bound(m.net, box, BoundMode::linear);
  const auto sampled = sample_lower_bound(m.net, box, std::max<std::size_t>(cfg.samples, 1), cfg.seed);

  OutputRecord out;
  out.data = detail::base_record("oracle", cfg, m, box, "linear");
  out.data["bound"] = linear->bound;
  out.data["row_bounds"] = detail::row_bounds(*linear);
  out.data["sample_lower_bound"] = {{"value", sampled.lower_bound},
                                    {"argmax_x", detail::to_json(sampled.argmax_x)},
                                    {"samples", sampled.samples},
                                    {"seed", sampled.seed}};
  try {
    const auto pat = enumerate_pattern_upper_bound(m.net, box);
    out.data["pattern_upper_bound"] = {{"value", pat.upper_bound},
                                       {"patterns_total", pat.patterns_total},
                                       {"patterns_feasible", pat.patterns_feasible},
                                       {"unstable", pat.unstable}};
  } catch (const TooManyUnstable& e) {
    out.data["pattern_upper_bound"] = {{"value", nullptr}, {"refused", e.what()}, {"unstable", e.count()}};
  }
  out.data["sandwich_ok"] = sampled.lower_bound <= linear->bound + kDominanceTol;
  out.invariant_violation = !out.data["sandwich_ok"].get<bool>();
  out.data["runtime_s"] = detail::seconds_since(t0);
  return out;
}

enum class Monotonicity { increasing, decreasing, unknown };

inline const char* to_string(Monotonicity m) {
  switch (m) {
    case Monotonicity::increasing: return "increasing";
    case Monotonicity::decreasing: return "decreasing";
    case Monotonicity::unknown: return "unknown";
  }
  return "?";
}

inline Monotonicity verdict(double lower, double upper) {
  if (lower > 0.0) return Monotonicity::increasing;
  if (upper < 0.0) return Monotonicity::decreasing;
  return Monotonicity::unknown;
}

/// verdicts[feature][class] with only `feature` free over its range.
struct MonotoneAnalysis {
  std::vector<std::vector<Monotonicity>> verdicts;
  double max_bound = 0.0;
};

inline MonotoneAnalysis analyze_monotonicity(const Network& net, const Vector& baseline, const Vector& range_lo,
                                             const Vector& range_hi) {
  const std::size_t d = net.input_dim();
  if (static_cast<std::size_t>(baseline.size()) != d) {
    throw InputError("baseline dimension mismatch: expected " + std::to_string(d) + " values, got " +
                     std::to_string(baseline.size()));
  }
  if (static_cast<std::size_t>(range_lo.size()) != d || static_cast<std::size_t>(range_hi.size()) != d) {
    throw InputError("feature ranges must have one entry per input feature");
  }
  MonotoneAnalysis out;
  out.verdicts.resize(d);
  for (std::size_t f = 0; f < d; ++f) {
    const auto fi = static_cast<Eigen::Index>(f);
    if (range_lo(fi) > range_hi(fi)) throw InputError("feature range " + std::to_string(f) + " is inverted");
    BoxDomain box{baseline, baseline};
    box.lo(fi) = range_lo(fi);
    box.hi(fi) = range_hi(fi);
    const auto [lower, upper] = jacobian_entry_bounds(net, box);
    for (std::size_t k = 0; k < net.output_dim(); ++k) {
      const auto ki = static_cast<Eigen::Index>(k);
      out.verdicts[f].push_back(verdict(lower(ki, fi), upper(ki, fi)));
    }
    out.max_bound = std::max(out.max_bound, lipschitz_upper_bound(net, box)->bound);
  }
  return out;
}

inline OutputRecord cmd_monotone(const RunConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto m = detail::load_model(cfg.model_path);
  const std::size_t d = m.net.input_dim();
  auto to_vec = [d](const std::vector<double>& v, const char* name) {
    if (v.size() == 1) return Vector::Constant(static_cast<Eigen::Index>(d), v[0]).eval();
    if (v.size() != d) {
      throw InputError(std::string(name) + " dimension mismatch: expected " + std::to_string(d) + " values, got " +
                       std::to_string(v.size()));
    }
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(d)).eval();
  };
  if (cfg.range_lo.empty() || cfg.range_hi.empty()) throw InputError("--range-lo and --range-hi are required");
  const Vector lo = to_vec(cfg.range_lo, "--range-lo");
  const Vector hi = to_vec(cfg.range_hi, "--range-hi");

  std::vector<Vector> baselines;
  if (!cfg.baselines_path.empty()) {
    for (const auto& b : detail::read_baselines(cfg.baselines_path, d)) {
      baselines.push_back(Eigen::Map<const Vector>(b.data(), static_cast<Eigen::Index>(d)));
    }
  } else {
    if (cfg.baseline.empty()) throw InputError("--baseline or --baselines is required");
    baselines.push_back(to_vec(cfg.baseline, "--baseline"));
  }
  if (baselines.empty()) throw InputError("baselines file is empty");

  const BoxDomain range_box{lo, hi};
  OutputRecord out;
  out.data = detail::base_record("monotone", cfg, m, range_box, "linear");
  const std::size_t K = m.net.output_dim();
  std::vector<std::vector<std::array<std::size_t, 3>>> counts(d, std::vector<std::array<std::size_t, 3>>(K));
  double max_bound = 0.0;
  nlohmann::json per_baseline = nlohmann::json::array();
  for (const auto& b : baselines) {
    const auto a = analyze_monotonicity(m.net, b, lo, hi);
    max_bound = std::max(max_bound, a.max_bound);
    nlohmann::json features = nlohmann::json::array();
    for (std::size_t f = 0; f < d; ++f) {
      nlohmann::json classes = nlohmann::json::array();
      for (std::size_t k = 0; k < K; ++k) {
        classes.push_back(to_string(a.verdicts[f][k]));
        ++counts[f][k][static_cast<std::size_t>(a.verdicts[f][k])];
      }
      features.push_back(classes);
    }
    per_baseline.push_back({{"baseline", detail::to_json(b)}, {"verdicts", features}});
  }
  nlohmann::json summary = nlohmann::json::array();
  for (std::size_t f = 0; f < d; ++f) {
    nlohmann::json classes = nlohmann::json::array();
    for (std::size_t k = 0; k < K; ++k) {
      const double n = static_cast<double>(baselines.size());
      classes.push_back({{"increasing_pct", 100.0 * static_cast<double>(counts[f][k][0]) / n},
                         {"decreasing_pct", 100.0 * static_cast<double>(counts[f][k][1]) / n},
                         {"unknown_pct", 100.0 * static_cast<double>(counts[f][k][2]) / n}});
    }
    summary.push_back(classes);
  }
  out.data["bound"] = max_bound;
  out.data["monotonicity"] = {{"per_baseline", per_baseline}, {"summary", summary}};
  out.data["runtime_s"] = detail::seconds_since(t0);
  return out;
}

inline OutputRecord cmd_compare(const RunConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto m = detail::load_model(cfg.model_path);
  const auto box = cfg.domain.to_box(m.net.input_dim());

  nlohmann::json rows = nlohmann::json::array();
  auto run_mode = [&](BoundMode mode) {
    auto r = lipschitz_upper_bound(m.net, box, mode);
    rows.push_back({{"method", to_string(mode)}, {"value", r->bound}, {"runtime_s", r->runtime_s}});
    return r->bound;
  };
  const double naive = run_mode(BoundMode::naive);
  const double interval = run_mode(BoundMode::interval);
  const double linear = run_mode(BoundMode::linear);

  std::vector<std::string> violations;
  if (linear > interval + kDominanceTol) violations.push_back("linear > interval");
  if (interval > naive + kDominanceTol) violations.push_back("interval > naive");
  double best = linear;
  if (cfg.compare_with_bab) {
    const auto r = run_bab(m.net, box, cfg.bab);
    rows.push_back({{"method", "bab"}, {"value", r.bound}, {"runtime_s", r.runtime_s}, {"complete", r.complete}});
    if (r.bound > linear + kDominanceTol) violations.push_back("bab > linear");
    best = std::min(best, r.bound);
  }

  OutputRecord out;
  out.data = detail::base_record("compare", cfg, m, box, "compare");
  out.data["bound"] = best;
  out.data["methods"] = rows;
  out.data["dominance_ok"] = violations.empty();
  out.data["violations"] = violations;
  out.invariant_violation = !violations.empty();
  out.data["runtime_s"] = detail::seconds_since(t0);
  return out;
}

// -- rendering --------------------------------------------------------------

namespace detail {

inline std::string eps_text(const nlohmann::json& rec) {
  if (rec["domain"].contains("eps")) {
    std::ostringstream os;
    os << rec["domain"]["eps"].get<double>();
    return os.str();
  }
  double w = 0.0;
  const auto& lo = rec["domain"]["lo"];
  const auto& hi = rec["domain"]["hi"];
  for (std::size_t i = 0; i < lo.size(); ++i) w = std::max(w, 0.5 * (hi[i].get<double>() - lo[i].get<double>()));
  std::ostringstream os;
  os << w;
  return os.str();
}

}  // namespace detail

/// CSV with columns model,mode,eps,bound,runtime_s; compare emits one line per method.
inline std::string render_csv(const nlohmann::json& rec) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "model,mode,eps,bound,runtime_s\n";
  const auto model = rec["model"].get<std::string>();
  const auto eps = detail::eps_text(rec);
  if (rec.contains("methods")) {
    for (const auto& m : rec["methods"]) {
      os << model << ',' << m["method"].get<std::string>() << ',' << eps << ',' << m["value"].get<double>() << ','
         << m["runtime_s"].get<double>() << '\n';
    }
  } else {
    os << model << ',' << rec["mode"].get<std::string>() << ',' << eps << ',' << rec["bound"].get<double>() << ','
       << rec["runtime_s"].get<double>() << '\n';
  }
  return os.str();
}

inline std::string render_table(const nlohmann::json& rec) {
  std::ostringstream os;
  os << std::setprecision(6);
  os << rec["command"].get<std::string>() << "  model=" << rec["model"].get<std::string>()
     << "  hash=" << rec["model_hash"].get<std::string>() << '\n';
  if (rec.contains("methods")) {
    os << std::left << std::setw(10) << "method" << std::right << std::setw(16) << "value" << std::setw(14)
       << "runtime_s" << '\n';
    for (const auto& m : rec["methods"]) {
      os << std::left << std::setw(10) << m["method"].get<std::string>() << std::right << std::setw(16)
         << m["value"].get<double>() << std::setw(14) << m["runtime_s"].get<double>() << '\n';
    }
    os << "dominance " << (rec["dominance_ok"].get<bool>() ? "ok" : "VIOLATED") << '\n';
    return os.str();
  }
  os << "mode=" << rec["mode"].get<std::string>() << "  bound=" << rec["bound"].get<double>()
     << "  runtime_s=" << rec["runtime_s"].get<double>() << '\n';
  if (rec.contains("sample_lower_bound")) {
    os << "sample lower bound   " << rec["sample_lower_bound"]["value"].get<double>() << '\n';
    os << "linear upper bound   " << rec["bound"].get<double>() << '\n';
    const auto& p = rec["pattern_upper_bound"];
    if (p["value"].is_null()) {
      os << "pattern upper bound  refused (" << p["unstable"].get<std::size_t>() << " unstable)\n";
    } else {
      os << "pattern upper bound  " << p["value"].get<double>() << '\n';
    }
  }
  if (rec.contains("bab")) {
    const auto& b = rec["bab"];
    os << "initial=" << b["initial_bound"].get<double>() << "  complete=" << b["complete"].get<bool>()
       << "  explored=" << b["domains_explored"].get<std::size_t>() << "  pruned=" << b["domains_pruned"].get<std::size_t>()
       << '\n';
  }
  if (rec.contains("monotonicity")) {
    const auto& per = rec["monotonicity"]["per_baseline"];
    if (per.size() == 1) {
      const auto& v = per[0]["verdicts"];
      for (std::size_t f = 0; f < v.size(); ++f) {
        os << "feature " << f << ':';
        for (const auto& c : v[f]) os << ' ' << c.get<std::string>();
        os << '\n';
      }
    } else {
      const auto& s = rec["monotonicity"]["summary"];
      for (std::size_t f = 0; f < s.size(); ++f) {
        os << "feature " << f << ':';
        for (const auto& c : s[f]) {
          os << "  +" << c["increasing_pct"].get<double>() << "% -" << c["decreasing_pct"].get<double>() << "% ?"
             << c["unknown_pct"].get<double>() << '%';
        }
        os << '\n';
      }
    }
  }
  return os.str();
}

inline std::string render(const OutputRecord& rec, OutputFormat fmt) {
  switch (fmt) {
    case OutputFormat::json: return rec.data.dump(2) + "\n";
    case OutputFormat::csv: return render_csv(rec.data);
    case OutputFormat::table: return render_table(rec.data);
  }
  return {};
}

}  // namespace lipcert
