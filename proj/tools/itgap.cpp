// itgap: imaginary-time spectral gap experiments.
//
//   itgap run --config configs/tfim_L4.json --out results/
//   itgap reproduce-table [--config configs/benchmarks.json] --out results/
//   itgap reproduce-figure [--config configs/benchmarks.json] --out results/
//   itgap selftest
//
// Exit codes: 0 ok, 1 validation error, 2 numerical failure,
// 3 support check failed (see --warnings-nonfatal).

#include <chrono>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "itgap/experiment.hpp"

namespace fs = std::filesystem;
using namespace itgap;

namespace {

struct Options {
  std::string config;
  std::string out = ".";
  std::optional<std::uint64_t> seed;
  std::string backend;
  bool warnings_nonfatal = false;
};

Overrides overrides(const Options& o) {
  Overrides ov;
  ov.seed = o.seed;
  if (!o.backend.empty()) ov.backend = parse_backend(o.backend);
  ov.warnings_nonfatal = o.warnings_nonfatal;
  return ov;
}

std::vector<ExperimentConfig> config_set(const Options& o) {
  auto set = o.config.empty() ? benchmark_configs() : load_config_set(o.config);
  for (auto& c : set) c = apply_overrides(c, overrides(o));
  return set;
}

void report_status(int status) {
  if (status == kExitPrecondition) std::cerr << "warning: support_check failed (exit 3)\n";
  if (status == kExitNumerical) std::cerr << "error: one or more estimators failed numerically (exit 2)\n";
}

int cmd_run(const Options& o) {
  if (o.config.empty()) throw ValidationError("run: --config is required");
  const auto cfg = apply_overrides(load_config(o.config), overrides(o));
  const auto r = run_experiment(cfg);
  const auto files = write_run(r, o.out);
  std::cout << "wrote " << files.trajectory_csv.string() << "\n"
            << "wrote " << files.provenance_json.string() << "\n"
            << "wrote " << files.estimates_json.string() << "\n";
  for (const auto& g : r.estimates["gap"]) {
    const auto& h = g[g["headline"].get<std::string>()];
    if (h.contains("error")) {
      std::cout << "M=" << g["M"] << "  gap estimator failed: " << h["error"].get<std::string>() << "\n";
    } else {
      std::cout << "M=" << g["M"] << "  gap " << h["value"] << "  exact " << h["exact"] << "  eps "
                << h["relative_error"] << "  tau " << h["tau"] << "\n";
    }
  }
  report_status(r.status);
  return r.status;
}

int cmd_table(const Options& o) {
  const auto t = reproduce_table(config_set(o));
  const fs::path out(o.out);
  write_text(out / "table.json", dump(t.table));
  write_text(out / "table.txt", t.text);
  std::cout << t.text << "wrote " << (out / "table.json").string() << "\n";
  report_status(t.status);
  return t.status;
}

int cmd_figure(const Options& o) {
  const auto f = reproduce_figure(config_set(o));
  const fs::path out(o.out);
  for (const auto& [name, text] : f.csv_files) {
    write_text(out / name, text);
    std::cout << "wrote " << (out / name).string() << "\n";
  }
  write_text(out / "figure_fits.json", dump(f.fits));
  std::cout << "wrote " << (out / "figure_fits.json").string() << "\n";
  for (const auto& m : f.fits["models"]) {
    for (const auto& c : m["curves"]) {
      if (c.contains("error")) continue;
      std::cout << m["name"].get<std::string>() << " M=" << c["M"] << "  slope " << c["value"] << "  expected "
                << c["exact"] << "  R^2 " << c["r_squared"] << "\n";
    }
  }
  report_status(f.status);
  return f.status;
}

int cmd_selftest(const Options& o) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto rep = run_selftest(o.seed.value_or(0));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << format_report(rep) << "elapsed " << secs << " s\n";
  return rep.passed() ? kExitOk : kExitNumerical;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spectral gaps from imaginary-time nested-commutator expectations"};
  app.set_version_flag("--version", std::string(kCodeVersion));
  app.require_subcommand(1);

  Options o;
  auto add_common = [&](CLI::App* sub, bool with_config) {
    if (with_config) sub->add_option("--config", o.config, "Experiment config (run) or config set (reproduce-*)");
    sub->add_option("--out", o.out, "Output directory")->capture_default_str();
    sub->add_option("--seed", o.seed, "Override the config seed");
    sub->add_option("--backend", o.backend, "Override the propagation backend")
        ->check(CLI::IsMember({"exact", "stepped"}));
    sub->add_flag("--warnings-nonfatal", o.warnings_nonfatal, "Exit 0 instead of 3 when support_check fails");
  };
  auto* run = app.add_subcommand("run", "Run one experiment config");
  add_common(run, true);
  auto* table = app.add_subcommand("reproduce-table", "E0+E1 and E2-E1 table for the benchmark models");
  add_common(table, true);
  auto* figure = app.add_subcommand("reproduce-figure", "epsilon(tau) curves and decay fits");
  add_common(figure, true);
  auto* self = app.add_subcommand("selftest", "Built-in correctness checks");
  self->add_option("--seed", o.seed, "Base seed for the random cases");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (*run) return cmd_run(o);
    if (*table) return cmd_table(o);
    if (*figure) return cmd_figure(o);
    if (*self) return cmd_selftest(o);
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const DimensionError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  }
  return kExitValidation;
}
