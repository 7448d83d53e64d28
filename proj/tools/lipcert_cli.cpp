#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "lipcert/commands.hpp"
#include "lipcert/lipcert.hpp"

namespace {

void add_domain(CLI::App* sub, lipcert::RunConfig& cfg) {
  sub->add_option("--center", cfg.domain.center, "ball center (one value broadcasts)")->delimiter(',');
  sub->add_option("--eps", cfg.domain.eps, "ball radius in l-inf");
  sub->add_option("--lo", cfg.domain.lo, "box lower corner")->delimiter(',');
  sub->add_option("--hi", cfg.domain.hi, "box upper corner")->delimiter(',');
}

void add_common(CLI::App* sub, lipcert::RunConfig& cfg, std::string& format, std::string& out_path) {
  sub->add_option("--model", cfg.model_path, "model JSON file")->required();
  sub->add_option("--format", format, "json | csv | table")->check(CLI::IsMember({"json", "csv", "table"}));
  sub->add_option("--out", out_path, "write output here instead of stdout");
}

void add_bab(CLI::App* sub, lipcert::RunConfig& cfg) {
  sub->add_option("--time-limit", cfg.bab.time_limit, "seconds");
  sub->add_option("--batch", cfg.bab.batch_size, "domains split per iteration");
  sub->add_option("--max-domains", cfg.bab.max_domains, "stop after this many domains");
}

lipcert::OutputFormat parse_format(const std::string& s) {
  if (s == "csv") return lipcert::OutputFormat::csv;
  if (s == "table") return lipcert::OutputFormat::table;
  return lipcert::OutputFormat::json;
}

void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream f(out_path);
  if (!f) throw lipcert::InputError("cannot write '" + out_path + "'");
  f << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Certified local Lipschitz bounds for ReLU networks"};
  app.require_subcommand(1);

  lipcert::RunConfig cfg;
  std::string format = "json";
  std::string out_path;
  std::string mode = "linear";
  std::string intermediate = "linear";

  auto* bound = app.add_subcommand("bound", "bound the local Lipschitz constant");
  add_common(bound, cfg, format, out_path);
  add_domain(bound, cfg);
  bound->add_option("--mode", mode, "linear | interval | naive")
      ->check(CLI::IsMember({"linear", "interval", "naive"}));
  bound->add_option("--intermediate", intermediate, "pre-activation bounds: linear | interval")
      ->check(CLI::IsMember({"linear", "interval"}));

  auto* bab = app.add_subcommand("bab", "tighten the bound by branch and bound");
  add_common(bab, cfg, format, out_path);
  add_domain(bab, cfg);
  add_bab(bab, cfg);

  auto* oracle = app.add_subcommand("oracle", "sandwich the bound between sampled and enumerated values");
  add_common(oracle, cfg, format, out_path);
  add_domain(oracle, cfg);
  oracle->add_option("--samples", cfg.samples, "random samples for the lower bound");
  oracle->add_option("--seed", cfg.seed, "sampling seed");

  auto* monotone = app.add_subcommand("monotone", "per-feature monotonicity verdicts");
  add_common(monotone, cfg, format, out_path);
  monotone->add_option("--range-lo", cfg.range_lo, "feature minimums")->delimiter(',');
  monotone->add_option("--range-hi", cfg.range_hi, "feature maximums")->delimiter(',');
  monotone->add_option("--baseline", cfg.baseline, "baseline input")->delimiter(',');
  monotone->add_option("--baselines", cfg.baselines_path, "JSON file with a list of baseline inputs");

  auto* compare = app.add_subcommand("compare", "naive, interval, linear (and bab) side by side");
  add_common(compare, cfg, format, out_path);
  add_domain(compare, cfg);
  compare->add_flag("--bab", cfg.compare_with_bab, "also run branch and bound");
  add_bab(compare, cfg);

  auto* gen = app.add_subcommand("gen", "write a seeded random network");
  lipcert::RandomNetSpec spec;
  std::uint64_t gen_seed = 0;
  double gen_eps = 0.1;
  bool nonnegative = false;
  bool negate = false;
  double bias_offset = 0.0;
  std::string gen_out;
  gen->add_option("--input-dim", spec.input_dim);
  gen->add_option("--hidden", spec.hidden, "hidden widths")->delimiter(',');
  gen->add_option("--output-dim", spec.output_dim);
  gen->add_option("--weight-scale", spec.weight_scale);
  gen->add_option("--bias-scale", spec.bias_scale);
  gen->add_option("--seed", gen_seed);
  gen->add_option("--eps", gen_eps, "suggested radius stored with the model");
  gen->add_flag("--nonnegative", nonnegative, "take absolute values of all weights");
  gen->add_flag("--negate", negate, "negate the last layer");
  gen->add_option("--bias-offset", bias_offset, "added to every hidden bias");
  gen->add_option("--out", gen_out, "output file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : lipcert::kExitInputError;
  }

  try {
    if (auto m = lipcert::parse_bound_mode(mode)) cfg.mode = *m;
    cfg.intermediate = intermediate == "interval" ? lipcert::IntermediateMethod::interval
                                                  : lipcert::IntermediateMethod::linear;
    cfg.format = parse_format(format);

    if (gen->parsed()) {
      if (spec.input_dim == 0 || spec.output_dim == 0) throw lipcert::InputError("dimensions must be positive");
      for (auto w : spec.hidden) {
        if (w == 0) throw lipcert::InputError("hidden widths must be positive");
      }
      auto net = lipcert::random_network(spec, gen_seed);
      if (nonnegative || negate || bias_offset != 0.0) {
        auto layers = net.layers();
        for (std::size_t i = 0; i < layers.size(); ++i) {
          if (nonnegative) layers[i].weight = layers[i].weight.cwiseAbs();
          if (i + 1 < layers.size()) layers[i].bias.array() += bias_offset;
          if (negate && i + 1 == layers.size()) {
            layers[i].weight = -layers[i].weight;
            layers[i].bias = -layers[i].bias;
          }
        }
        net = lipcert::Network(std::move(layers));
      }
      auto doc = lipcert::network_to_json(net);
      doc["meta"] = {{"seed", gen_seed}, {"eps", gen_eps}};
      emit(doc.dump() + "\n", gen_out);
      return lipcert::kExitOk;
    }

    lipcert::OutputRecord rec;
    if (bound->parsed()) rec = lipcert::cmd_bound(cfg);
    else if (bab->parsed()) rec = lipcert::cmd_bab(cfg);
    else if (oracle->parsed()) rec = lipcert::cmd_oracle(cfg);
    else if (monotone->parsed()) rec = lipcert::cmd_monotone(cfg);
    else rec = lipcert::cmd_compare(cfg);

    emit(lipcert::render(rec, cfg.format), out_path);
    if (rec.invariant_violation) std::cerr << "error: bound invariant violated\n";
    return rec.exit_code();
  } catch (const lipcert::InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return lipcert::kExitInputError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return lipcert::kExitInputError;
  }
}
