#pragma once

#include <boost/multiprecision/float128.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "itgap/dense.hpp"
#include "itgap/ed_oracle.hpp"
#include "itgap/error.hpp"
#include "itgap/gap_estimators.hpp"
#include "itgap/imaginary_time.hpp"
#include "itgap/lattice_models.hpp"
#include "itgap/operator_algebra.hpp"

#ifndef ITGAP_VERSION
#define ITGAP_VERSION "dev"
#endif

namespace itgap {

using Json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kCodeVersion = "itgap " ITGAP_VERSION;

enum class ModelType { tfim, fermi_hubbard };
enum class Precision { double_, extended, quad };

inline std::string_view to_string(ModelType t) { return t == ModelType::tfim ? "tfim" : "fermi_hubbard"; }
inline std::string_view to_string(Precision p) {
  return p == Precision::double_ ? "double" : p == Precision::extended ? "extended" : "quad";
}
inline std::string_view to_string(Boundary b) { return b == Boundary::periodic ? "periodic" : "open"; }
inline std::string_view to_string(HubbardObservable o) {
  return o == HubbardObservable::mode_density ? "mode_density" : "site_density";
}
inline std::string_view to_string(ModeOrdering o) {
  return o == ModeOrdering::species_major ? "species_major" : "interleaved";
}

struct ExperimentConfig {
  std::string name;
  ModelType model = ModelType::tfim;
  SpinChainSpec tfim;
  HubbardSpec hubbard;
  ModeOrdering ordering = ModeOrdering::species_major;
  std::uint64_t seed = 0;
  std::vector<unsigned> m_list;
  double tau_min = 0.0;
  double tau_max = 20.0;
  std::size_t tau_count = 201;
  Backend backend = Backend::exact;
  double max_step = 0.1;
  Precision precision = Precision::double_;
  unsigned threads = 1;
  TauSelection tau_selection = TauSelection::min_slope;
  unsigned estimator_order = 1;
  FitWindow gap_window{0.0, 20.0};
  FitWindow energy_sum_window = kDefaultEnergySumWindow;
  FitWindow second_gap_window = kDefaultSecondGapWindow;
  FitWindow error_law_window = kDefaultSecondGapWindow;
  std::string trajectory_csv = "trajectory.csv";
  std::string estimates_json = "estimates.json";
  bool fail_on_precondition_warning = true;

  std::vector<double> grid() const { return uniform_grid(tau_min, tau_max, tau_count); }
};

namespace detail {

// Parsed text yields unsigned for nonnegative literals; built Json may hold signed ones.
inline bool is_nonnegative_integer(const Json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0);
}

class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ValidationError(where_ + ": expected a JSON object");
  }

  /// Rejects any key that was never asked for.
  void done() const {
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.count(key)) throw ValidationError(where_ + ": unknown key '" + key + "'");
    }
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  const Json& at(const std::string& key) {
    if (!has(key)) throw ValidationError(where_ + ": missing required key '" + key + "'");
    return j_.at(key);
  }

  double number(const std::string& key) {
    const Json& v = at(key);
    if (!v.is_number()) throw ValidationError(where_ + "." + key + ": expected a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) throw ValidationError(where_ + "." + key + ": must be finite");
    return x;
  }
  double number(const std::string& key, double fallback) { return has(key) ? number(key) : fallback; }

  std::uint64_t unsigned_int(const std::string& key) {
    const Json& v = at(key);
    if (!is_nonnegative_integer(v)) throw ValidationError(where_ + "." + key + ": expected a nonnegative integer");
    return v.get<std::uint64_t>();
  }
  std::uint64_t unsigned_int(const std::string& key, std::uint64_t fallback) {
    return has(key) ? unsigned_int(key) : fallback;
  }

  std::string string(const std::string& key) {
    const Json& v = at(key);
    if (!v.is_string()) throw ValidationError(where_ + "." + key + ": expected a string");
    return v.get<std::string>();
  }
  std::string string(const std::string& key, std::string fallback) {
    return has(key) ? string(key) : std::move(fallback);
  }

  bool boolean(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const Json& v = j_.at(key);
    if (!v.is_boolean()) throw ValidationError(where_ + "." + key + ": expected true or false");
    return v.get<bool>();
  }

  FitWindow window(const std::string& key, FitWindow fallback) {
    if (!has(key)) return fallback;
    const Json& v = j_.at(key);
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
      throw ValidationError(where_ + "." + key + ": expected [tau_min, tau_max]");
    }
    try {
      return FitWindow(v[0].get<double>(), v[1].get<double>());
    } catch (const ValidationError& e) {
      throw ValidationError(where_ + "." + key + ": " + e.what());
    }
  }

  const std::string& where() const { return where_; }

 private:
  const Json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

inline int small_int(std::uint64_t v, const std::string& what) {
  if (v > 1000) throw ValidationError(what + ": value too large");
  return int(v);
}

inline Boundary parse_boundary(const std::string& s) {
  if (s == "periodic") return Boundary::periodic;
  if (s == "open") return Boundary::open;
  throw ValidationError("unknown boundary '" + s + "'");
}

inline HubbardObservable parse_hubbard_observable(const std::string& s) {
  if (s == "mode_density") return HubbardObservable::mode_density;
  if (s == "site_density") return HubbardObservable::site_density;
  throw ValidationError("unknown observable '" + s + "'");
}

inline Precision parse_precision(const std::string& s) {
  if (s == "double") return Precision::double_;
  if (s == "extended") return Precision::extended;
  if (s == "quad") return Precision::quad;
  throw ValidationError("unknown precision '" + s + "'");
}

inline std::size_t window_points(const std::vector<double>& grid, const FitWindow& w) {
  std::size_t n = 0;
  for (double t : grid) n += w.contains(t) ? 1 : 0;
  return n;
}

inline Json window_json(const FitWindow& w) { return Json::array({w.tau_min, w.tau_max}); }

}  // namespace detail

/// Validates everything up front; nothing is computed from a config that fails here.
inline void validate_config(const ExperimentConfig& c) {
  if (c.m_list.empty()) throw ValidationError("m_list must be non-empty");
  for (unsigned m : c.m_list) {
    if (m > 30) throw ValidationError("m_list entries must be <= 30");
  }
  if (std::find(c.m_list.begin(), c.m_list.end(), c.estimator_order) == c.m_list.end()) {
    throw ValidationError("estimators.order must be one of m_list");
  }
  if (!(c.tau_min >= 0.0) || !(c.tau_max > c.tau_min)) {
    throw ValidationError("tau_grid: require 0 <= min < max");
  }
  if (c.tau_count < 3 || c.tau_count > 1000000) throw ValidationError("tau_grid.count must lie in [3, 1e6]");
  if (!(c.max_step > 0.0)) throw ValidationError("stepped.max_step must be > 0");
  if (c.threads < 1 || c.threads > 256) throw ValidationError("threads must lie in [1, 256]");
  if (c.precision == Precision::quad && c.backend != Backend::stepped) {
    throw ValidationError("precision 'quad' requires the stepped backend");
  }
  const auto grid = c.grid();
  const std::pair<const char*, const FitWindow*> windows[] = {{"gap_window", &c.gap_window},
                                                              {"energy_sum_window", &c.energy_sum_window},
                                                              {"second_gap_window", &c.second_gap_window},
                                                              {"error_law_window", &c.error_law_window}};
  for (const auto& [name, w] : windows) {
    if (detail::window_points(grid, *w) < 3) {
      throw ValidationError(std::string("estimators.") + name + " must contain at least 3 grid points");
    }
  }
  if (c.trajectory_csv.empty() || c.estimates_json.empty()) throw ValidationError("output paths must be non-empty");

  std::size_t dim = 0;
  if (c.model == ModelType::tfim) {
    c.tfim.validate();
    if (c.tfim.sites > 20) throw ValidationError("model.L must be <= 20 for tfim");
    dim = std::size_t{1} << c.tfim.sites;
  } else {
    c.hubbard.validate();
    dim = std::size_t(binomial(unsigned(c.hubbard.sites), unsigned(c.hubbard.n_up)) *
                      binomial(unsigned(c.hubbard.sites), unsigned(c.hubbard.n_down)));
    if (dim > kDefaultDimensionCap) throw ValidationError("model: sector dimension exceeds cap");
  }
  if (c.backend == Backend::exact && dim > kDenseCap) {
    throw ValidationError("exact backend requires dimension <= " + std::to_string(kDenseCap));
  }
}

inline ExperimentConfig parse_config(const Json& j) {
  ExperimentConfig c;
  detail::ObjectReader top(j, "config");
  if (!top.at("schema_version").is_number_integer() || top.at("schema_version").get<long long>() != kSchemaVersion) {
    throw ValidationError("config.schema_version: expected " + std::to_string(kSchemaVersion));
  }
  {
    detail::ObjectReader m(top.at("model"), "model");
    const std::string type = m.string("type");
    if (type == "tfim") {
      c.model = ModelType::tfim;
      c.tfim.sites = detail::small_int(m.unsigned_int("L"), "model.L");
      c.tfim.coupling = m.number("J");
      c.tfim.field = m.number("h");
      c.tfim.boundary = detail::parse_boundary(m.string("boundary", "periodic"));
    } else if (type == "fermi_hubbard") {
      c.model = ModelType::fermi_hubbard;
      c.hubbard.sites = detail::small_int(m.unsigned_int("L"), "model.L");
      c.hubbard.hopping = m.number("t");
      c.hubbard.interaction = m.number("U");
      c.hubbard.n_up = detail::small_int(m.unsigned_int("n_up", std::uint64_t(c.hubbard.sites / 2)), "model.n_up");
      c.hubbard.n_down =
          detail::small_int(m.unsigned_int("n_down", std::uint64_t(c.hubbard.sites / 2)), "model.n_down");
      c.hubbard.boundary = detail::parse_boundary(m.string("boundary", "open"));
      c.hubbard.observable = detail::parse_hubbard_observable(m.string("observable", "mode_density"));
      c.ordering = parse_mode_ordering(m.string("ordering", "species_major"));
    } else {
      throw ValidationError("model.type: expected 'tfim' or 'fermi_hubbard', got '" + type + "'");
    }
    m.done();
  }
  c.name = top.string("name", std::string(to_string(c.model)));
  c.seed = top.unsigned_int("seed");
  {
    const Json& ml = top.at("m_list");
    if (!ml.is_array()) throw ValidationError("config.m_list: expected an array");
    std::set<unsigned> seen;
    for (const auto& v : ml) {
      if (!detail::is_nonnegative_integer(v)) throw ValidationError("config.m_list: entries must be nonnegative integers");
      const auto m = v.get<std::uint64_t>();
      if (m > 30) throw ValidationError("config.m_list: entries must be <= 30");
      if (!seen.insert(unsigned(m)).second) throw ValidationError("config.m_list: duplicate entry");
      c.m_list.push_back(unsigned(m));
    }
  }
  {
    detail::ObjectReader g(top.at("tau_grid"), "tau_grid");
    c.tau_min = g.number("min");
    c.tau_max = g.number("max");
    c.tau_count = std::size_t(g.unsigned_int("count"));
    g.done();
  }
  c.backend = parse_backend(top.string("backend", "exact"));
  if (top.has("stepped")) {
    detail::ObjectReader s(top.at("stepped"), "stepped");
    c.max_step = s.number("max_step", c.max_step);
    s.done();
  }
  c.precision = detail::parse_precision(top.string("precision", "double"));
  c.threads = unsigned(std::min<std::uint64_t>(top.unsigned_int("threads", 1), 1000));
  c.gap_window = FitWindow(c.tau_min, c.tau_max > c.tau_min ? c.tau_max : c.tau_min + 1.0);
  c.estimator_order = c.m_list.empty() ? 1 : c.m_list.front();
  if (top.has("estimators")) {
    detail::ObjectReader e(top.at("estimators"), "estimators");
    c.tau_selection = parse_tau_selection(e.string("tau_selection", "min_slope"));
    c.estimator_order = unsigned(std::min<std::uint64_t>(e.unsigned_int("order", c.estimator_order), 1000));
    c.gap_window = e.window("gap_window", c.gap_window);
    c.energy_sum_window = e.window("energy_sum_window", c.energy_sum_window);
    c.second_gap_window = e.window("second_gap_window", c.second_gap_window);
    c.error_law_window = e.window("error_law_window", c.second_gap_window);
    e.done();
  } else {
    c.error_law_window = c.second_gap_window;
  }
  if (top.has("output")) {
    detail::ObjectReader o(top.at("output"), "output");
    c.trajectory_csv = o.string("trajectory_csv", c.trajectory_csv);
    c.estimates_json = o.string("estimates_json", c.estimates_json);
    o.done();
  }
  c.fail_on_precondition_warning = top.boolean("fail_on_precondition_warning", true);
  top.done();
  validate_config(c);
  return c;
}

inline Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ValidationError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

inline ExperimentConfig load_config(const std::filesystem::path& path) { return parse_config(read_json_file(path)); }

/// Normalized echo of a config: every field explicit, re-parseable.
inline Json config_to_json(const ExperimentConfig& c) {
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["name"] = c.name;
  Json m;
  m["type"] = to_string(c.model);
  if (c.model == ModelType::tfim) {
    m["L"] = c.tfim.sites;
    m["J"] = c.tfim.coupling;
    m["h"] = c.tfim.field;
    m["boundary"] = to_string(c.tfim.boundary);
  } else {
    m["L"] = c.hubbard.sites;
    m["t"] = c.hubbard.hopping;
    m["U"] = c.hubbard.interaction;
    m["n_up"] = c.hubbard.n_up;
    m["n_down"] = c.hubbard.n_down;
    m["boundary"] = to_string(c.hubbard.boundary);
    m["observable"] = to_string(c.hubbard.observable);
    m["ordering"] = to_string(c.ordering);
  }
  j["model"] = m;
  j["seed"] = c.seed;
  j["m_list"] = c.m_list;
  j["tau_grid"] = {{"min", c.tau_min}, {"max", c.tau_max}, {"count", c.tau_count}};
  j["backend"] = to_string(c.backend);
  j["precision"] = to_string(c.precision);
  j["stepped"] = {{"max_step", c.max_step}};
  j["threads"] = c.threads;
  j["estimators"] = {{"tau_selection", to_string(c.tau_selection)},
                     {"order", c.estimator_order},
                     {"gap_window", detail::window_json(c.gap_window)},
                     {"energy_sum_window", detail::window_json(c.energy_sum_window)},
                     {"second_gap_window", detail::window_json(c.second_gap_window)},
                     {"error_law_window", detail::window_json(c.error_law_window)}};
  j["output"] = {{"trajectory_csv", c.trajectory_csv}, {"estimates_json", c.estimates_json}};
  j["fail_on_precondition_warning"] = c.fail_on_precondition_warning;
  return j;
}

inline Json provenance(const ExperimentConfig& c) {
  return {{"code_version", kCodeVersion},
          {"schema_version", kSchemaVersion},
          {"seed", c.seed},
          {"backend", to_string(c.backend)},
          {"config", config_to_json(c)}};
}

/// The two benchmark setups: TFIM J = h = 1 and Fermi-Hubbard t = 1, U = sqrt(2), both L = 4.
inline std::vector<ExperimentConfig> benchmark_configs() {
  ExperimentConfig tfim;
  tfim.name = "tfim_L4";
  tfim.model = ModelType::tfim;
  tfim.seed = 1;
  tfim.m_list = {1, 2};
  tfim.second_gap_window = FitWindow(2.0, 8.0);
  tfim.error_law_window = FitWindow(4.0, 9.0);

  ExperimentConfig fh = tfim;
  fh.name = "fermi_hubbard_L4";
  fh.model = ModelType::fermi_hubbard;
  fh.hubbard = HubbardSpec::half_filling(4, 1.0, std::sqrt(2.0));
  fh.second_gap_window = FitWindow(6.0, 16.0);
  fh.error_law_window = FitWindow(6.0, 16.0);
  return {tfim, fh};
}

struct BuiltModel {
  SparseOperator<double> hamiltonian;
  SparseOperator<double> observable;
};

inline BuiltModel build_model(const ExperimentConfig& c) {
  if (c.model == ModelType::tfim) return {tfim_hamiltonian(c.tfim), tfim_observable(c.tfim)};
  auto m = fermi_hubbard_hamiltonian(c.hubbard, c.ordering);
  auto o = fh_observable(c.hubbard, m.basis);
  return {std::move(m.hamiltonian), std::move(o)};
}

inline Trajectory run_trajectory(const ExperimentConfig& c, const BuiltModel& m, const LogScaledState<double>& phi0) {
  TrajectoryOptions opt;
  opt.max_step = c.max_step;
  opt.threads = c.threads;
  opt.model_tag = c.name;
  opt.seed = c.seed;
  if (c.precision == Precision::extended) {
    return compute_trajectory(m.hamiltonian.cast<long double>(), m.observable.cast<long double>(),
                              phi0.cast<long double>(), c.grid(), c.m_list, c.backend, opt);
  }
  if (c.precision == Precision::quad) {
    using quad = boost::multiprecision::float128;
    return compute_trajectory(m.hamiltonian.cast<quad>(), m.observable.cast<quad>(), phi0.cast<quad>(), c.grid(),
                              c.m_list, c.backend, opt);
  }
  return compute_trajectory(m.hamiltonian, m.observable, phi0, c.grid(), c.m_list, c.backend, opt);
}

enum ExitStatus : int { kExitOk = 0, kExitValidation = 1, kExitNumerical = 2, kExitPrecondition = 3 };

struct RunResult {
  ExperimentConfig config;
  Trajectory trajectory;
  std::optional<SpectralDecomposition> spectrum;
  ExactGaps exact;
  Json estimates;
  int status = kExitOk;
};

namespace detail {

inline std::string fmt17(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline Json optional_number(std::optional<double> v) { return v ? Json(*v) : Json(nullptr); }

inline Json paired(double value, std::optional<double> exact) {
  Json j;
  j["value"] = value;
  j["exact"] = optional_number(exact);
  j["relative_error"] = exact && *exact != 0.0 ? Json(relative_error(*exact, value)) : Json(nullptr);
  return j;
}

inline Json diagnostics_json(const GapDiagnostics& d) {
  Json j;
  if (d.imag_fraction) j["imag_fraction"] = *d.imag_fraction;
  if (d.r_squared) j["r_squared"] = *d.r_squared;
  if (d.slope_stderr) j["slope_stderr"] = *d.slope_stderr;
  j["point_count"] = d.point_count;
  j["warnings"] = d.warnings;
  return j;
}

inline Json estimate_json(const GapEstimate& e, std::optional<double> exact) {
  Json j = paired(e.value, exact);
  j["method"] = to_string(e.method);
  j["M"] = e.order;
  if (e.tau_used) j["tau"] = *e.tau_used;
  if (e.window) j["window"] = window_json(*e.window);
  j["diagnostics"] = diagnostics_json(e.diagnostics);
  return j;
}

/// Runs `f`, turning a NumericalError into an {"error": ...} entry.
template <class F>
Json guarded(F&& f, bool& failed) {
  try {
    return f();
  } catch (const NumericalError& e) {
    failed = true;
    return Json{{"error", e.what()}};
  }
}

}  // namespace detail

inline std::string trajectory_csv(const Trajectory& traj, const std::optional<double>& exact_gap) {
  std::ostringstream out;
  out << "tau,M,expectation_log_magnitude,expectation_phase_real,expectation_phase_imag,ratio_real,ratio_imag,"
         "epsilon_vs_exact\n";
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t i = 0; i < traj.size(); ++i) {
    for (unsigned m : traj.metadata().m_list) {
      const auto& v = traj.expectation(i, m);
      std::complex<double> phase;
      if (!v.is_zero()) phase = v.mantissa() / std::abs(v.mantissa());
      std::complex<double> r(nan, nan);
      double eps = nan;
      if (!v.is_zero()) {
        r = traj.ratio(i, m).to_complex();
        if (exact_gap && r.real() > 0.0) eps = relative_error(*exact_gap, std::sqrt(r.real()));
      }
      out << detail::fmt17(traj.tau(i)) << ',' << m << ',' << detail::fmt17(v.log_abs()) << ','
          << detail::fmt17(phase.real()) << ',' << detail::fmt17(phase.imag()) << ',' << detail::fmt17(r.real())
          << ',' << detail::fmt17(r.imag()) << ',' << detail::fmt17(eps) << '\n';
    }
  }
  return out.str();
}

inline RunResult run_experiment(const ExperimentConfig& cfg) {
  validate_config(cfg);
  const BuiltModel model = build_model(cfg);
  const std::size_t dim = model.hamiltonian.dim();
  const auto phi0 = random_initial_state(dim, cfg.seed);

  std::optional<SpectralDecomposition> spectrum;
  ExactGaps exact;
  if (dim <= kDenseCap) {
    spectrum = spectral_decomposition(model.hamiltonian);
    exact = exact_gaps(*spectrum);
  }

  RunResult res{cfg, run_trajectory(cfg, model, phi0), spectrum, exact, Json{}, kExitOk};
  const Trajectory& traj = res.trajectory;
  bool numerical_failure = false;
  std::vector<std::string> warnings;

  Json est;
  est["provenance"] = provenance(cfg);
  est["model"] = {{"type", to_string(cfg.model)}, {"dimension", dim}};

  Json ex;
  if (spectrum) {
    const auto& e = spectrum->energies;
    for (std::size_t n = 0; n < std::min<std::size_t>(3, e.size()); ++n) ex["E" + std::to_string(n)] = e[n];
  }
  ex["delta_e"] = detail::optional_number(exact.delta_e);
  ex["energy_sum"] = detail::optional_number(exact.energy_sum);
  ex["second_gap"] = detail::optional_number(exact.second_gap);
  est["exact"] = ex;

  if (spectrum && spectrum->levels() >= 2) {
    std::set<unsigned> orders;
    for (unsigned m : cfg.m_list) orders.insert({m, m + 2});
    const auto rep = support_check(*spectrum, model.observable, phi0, {orders.begin(), orders.end()});
    Json norms;
    for (const auto& [m, v] : rep.commutator_norms) norms[std::to_string(m)] = v;
    est["support_check"] = {{"passed", rep.passed()},
                            {"cross_term", rep.cross_term},
                            {"floor", rep.floor},
                            {"commutator_norms", norms}};
    if (!rep.passed()) warnings.push_back("support_check failed: ratio estimates may not converge to the gap");
  } else {
    est["support_check"] = nullptr;
    warnings.push_back("support_check skipped: no exact spectrum available");
  }

  Json gaps = Json::array();
  for (unsigned m : cfg.m_list) {
    Json g;
    g["M"] = m;
    for (TauSelection mode : {TauSelection::min_slope, TauSelection::largest_tau}) {
      g[std::string(to_string(mode))] = detail::guarded(
          [&] {
            const double tau = select_tau(traj, m, cfg.gap_window, mode);
            return detail::estimate_json(gap_from_ratio(traj, m, tau), exact.delta_e);
          },
          numerical_failure);
    }
    g["headline"] = std::string(to_string(cfg.tau_selection));
    if (exact.delta_e) {
      const auto eps = epsilon_curve(traj, m, *exact.delta_e);
      std::optional<std::size_t> best;
      for (std::size_t i = 0; i < eps.size(); ++i) {
        if (eps[i] && (!best || std::abs(*eps[i]) < std::abs(*eps[*best]))) best = i;
      }
      g["min_epsilon"] = best ? Json{{"value", std::abs(*eps[*best])}, {"tau", traj.tau(*best)}} : Json(nullptr);
    }
    gaps.push_back(g);
  }
  est["gap"] = gaps;

  const unsigned order = cfg.estimator_order;
  est["energy_sum"] = detail::guarded(
      [&] { return detail::estimate_json(sum_from_log_slope(traj, order, cfg.energy_sum_window), exact.energy_sum); },
      numerical_failure);

  est["second_gap"] = detail::guarded(
      [&] {
        // Delta E read off at the largest tau of the gap window.
        const double tau = select_tau(traj, order, cfg.gap_window, TauSelection::largest_tau);
        const double de = gap_from_ratio(traj, order, tau).value;
        Json j = detail::estimate_json(second_gap(traj, order, de, cfg.second_gap_window), exact.second_gap);
        j["delta_e_used"] = de;
        j["delta_e_tau"] = tau;
        return j;
      },
      numerical_failure);

  if (exact.delta_e && exact.second_gap) {
    est["error_law"] = detail::guarded(
        [&] {
          const auto f = epsilon_decay_fit(traj, order, *exact.delta_e, cfg.error_law_window);
          Json j = detail::paired(f.slope, -*exact.second_gap);
          j["M"] = order;
          j["r_squared"] = f.r_squared;
          j["window"] = detail::window_json(cfg.error_law_window);
          j["point_count"] = f.points;
          return j;
        },
        numerical_failure);
  } else {
    est["error_law"] = nullptr;
  }

  if (numerical_failure) warnings.push_back("one or more estimators failed numerically");
  est["warnings"] = warnings;
  if (numerical_failure) {
    res.status = kExitNumerical;
  } else if (est["support_check"].is_null() || !est["support_check"]["passed"].get<bool>()) {
    res.status = cfg.fail_on_precondition_warning ? kExitPrecondition : kExitOk;
  }
  est["exit_status"] = res.status;
  res.estimates = std::move(est);
  return res;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw ValidationError("write failed for '" + path.string() + "'");
}

inline std::string dump(const Json& j) { return j.dump(2) + "\n"; }

struct RunFiles {
  std::filesystem::path trajectory_csv;
  std::filesystem::path provenance_json;
  std::filesystem::path estimates_json;
};

/// Writes the trajectory CSV, its provenance sidecar and the estimates JSON.
inline RunFiles write_run(const RunResult& r, const std::filesystem::path& out_dir) {
  RunFiles f{out_dir / r.config.trajectory_csv, {}, out_dir / r.config.estimates_json};
  f.provenance_json = f.trajectory_csv;
  f.provenance_json += ".provenance.json";
  write_text(f.trajectory_csv, trajectory_csv(r.trajectory, r.exact.delta_e));
  write_text(f.provenance_json, dump({{"provenance", provenance(r.config)}}));
  write_text(f.estimates_json, dump(r.estimates));
  return f;
}

// ---------------------------------------------------------------------------
// Config sets and the reproduction commands

/// A config set is {"schema_version": 1, "configs": [...]} whose entries are
/// paths (relative to the set file) or inline experiment configs.
inline std::vector<ExperimentConfig> load_config_set(const std::filesystem::path& path) {
  const Json j = read_json_file(path);
  detail::ObjectReader top(j, "config_set");
  if (!top.at("schema_version").is_number_integer() || top.at("schema_version").get<long long>() != kSchemaVersion) {
    throw ValidationError("config_set.schema_version: expected " + std::to_string(kSchemaVersion));
  }
  const Json& list = top.at("configs");
  top.done();
  if (!list.is_array() || list.empty()) throw ValidationError("config_set.configs: expected a non-empty array");
  std::vector<ExperimentConfig> out;
  for (const auto& entry : list) {
    if (entry.is_string()) {
      out.push_back(load_config(path.parent_path() / entry.get<std::string>()));
    } else {
      out.push_back(parse_config(entry));
    }
  }
  std::set<std::string> names;
  for (const auto& c : out) {
    if (!names.insert(c.name).second) throw ValidationError("config_set: duplicate config name '" + c.name + "'");
  }
  return out;
}

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<Backend> backend;
  bool warnings_nonfatal = false;
};

inline ExperimentConfig apply_overrides(ExperimentConfig c, const Overrides& o) {
  if (o.seed) c.seed = *o.seed;
  if (o.backend) c.backend = *o.backend;
  if (o.warnings_nonfatal) c.fail_on_precondition_warning = false;
  validate_config(c);
  return c;
}

namespace detail {

inline int combine_status(int a, int b) {
  if (a == kExitNumerical || b == kExitNumerical) return kExitNumerical;
  return std::max(a, b);
}

inline Json table_row(const char* quantity, const Json& est) {
  Json row;
  row["quantity"] = quantity;
  if (est.contains("error")) {
    row["error"] = est["error"];
    return row;
  }
  row["exact"] = est["exact"];
  row["method"] = est["value"];
  row["relative_error"] = est["relative_error"];
  return row;
}

inline std::string cell(const Json& v) {
  if (v.is_null()) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v.get<double>());
  return buf;
}

}  // namespace detail

struct TableResult {
  Json table;
  std::string text;
  int status = kExitOk;
};

/// Exact / method / relative error for E0+E1 and E2-E1, one panel per config.
inline TableResult reproduce_table(const std::vector<ExperimentConfig>& configs) {
  TableResult t;
  Json panels = Json::array();
  std::ostringstream txt;
  char label = 'a';
  for (const auto& cfg : configs) {
    const RunResult r = run_experiment(cfg);
    t.status = detail::combine_status(t.status, r.status);
    Json p;
    p["name"] = cfg.name;
    p["model"] = config_to_json(cfg)["model"];
    p["M"] = cfg.estimator_order;
    p["rows"] = Json::array({detail::table_row("E0+E1", r.estimates["energy_sum"]),
                             detail::table_row("E2-E1", r.estimates["second_gap"])});
    p["support_check_passed"] =
        r.estimates["support_check"].is_null() ? Json(nullptr) : r.estimates["support_check"]["passed"];
    p["provenance"] = r.estimates["provenance"];
    txt << "(" << label++ << ") " << cfg.name << "  M=" << cfg.estimator_order << "\n";
    txt << "  quantity      exact        method       relative_error\n";
    for (const auto& row : p["rows"]) {
      char line[160];
      if (row.contains("error")) {
        std::snprintf(line, sizeof line, "  %-8s  estimator failed: %s\n", row["quantity"].get<std::string>().c_str(),
                      row["error"].get<std::string>().c_str());
      } else {
        std::snprintf(line, sizeof line, "  %-8s  %12s  %12s  %12s\n", row["quantity"].get<std::string>().c_str(),
                      detail::cell(row["exact"]).c_str(), detail::cell(row["method"]).c_str(),
                      detail::cell(row["relative_error"]).c_str());
      }
      txt << line;
    }
    txt << "\n";
    panels.push_back(p);
  }
  t.table = {{"code_version", kCodeVersion}, {"panels", panels}};
  t.text = txt.str();
  return t;
}

struct FigureResult {
  std::vector<std::pair<std::string, std::string>> csv_files;  // file name, contents
  Json fits;
  int status = kExitOk;
};

/// Per-model epsilon(tau) curves for every M, plus a log-linear fit of each
/// curve over the error-law window compared against -(E2 - E1).
inline FigureResult reproduce_figure(const std::vector<ExperimentConfig>& configs) {
  FigureResult f;
  Json models = Json::array();
  for (const auto& cfg : configs) {
    const RunResult r = run_experiment(cfg);
    f.status = detail::combine_status(f.status, r.status);
    if (!r.exact.delta_e) throw ValidationError("reproduce-figure: '" + cfg.name + "' has no exact gap");
    std::ostringstream csv;
    csv << "tau,M,epsilon\n";
    Json curves = Json::array();
    std::vector<std::vector<std::optional<double>>> eps;
    for (unsigned m : cfg.m_list) eps.push_back(epsilon_curve(r.trajectory, m, *r.exact.delta_e));
    for (std::size_t i = 0; i < r.trajectory.size(); ++i) {
      for (std::size_t k = 0; k < cfg.m_list.size(); ++k) {
        csv << detail::fmt17(r.trajectory.tau(i)) << ',' << cfg.m_list[k] << ','
            << detail::fmt17(eps[k][i] ? std::abs(*eps[k][i]) : std::numeric_limits<double>::quiet_NaN()) << '\n';
      }
    }
    bool failed = false;
    for (unsigned m : cfg.m_list) {
      Json c = detail::guarded(
          [&] {
            const auto fit = epsilon_decay_fit(r.trajectory, m, *r.exact.delta_e, cfg.error_law_window);
            const std::optional<double> expected =
                r.exact.second_gap ? std::optional<double>(-*r.exact.second_gap) : std::nullopt;
            Json j = detail::paired(fit.slope, expected);
            j["intercept"] = fit.intercept;
            j["r_squared"] = fit.r_squared;
            j["point_count"] = fit.points;
            return j;
          },
          failed);
      c["M"] = m;
      c["window"] = detail::window_json(cfg.error_law_window);
      for (const auto& g : r.estimates["gap"]) {
        if (g["M"] == m) c["min_epsilon"] = g["min_epsilon"];
      }
      curves.push_back(c);
    }
    if (failed) f.status = kExitNumerical;
    const std::string file = "figure_" + cfg.name + ".csv";
    f.csv_files.emplace_back(file, csv.str());
    models.push_back({{"name", cfg.name},
                      {"csv", file},
                      {"exact", r.estimates["exact"]},
                      {"curves", curves},
                      {"provenance", r.estimates["provenance"]}});
  }
  f.fits = {{"code_version", kCodeVersion}, {"models", models}};
  return f;
}

// ---------------------------------------------------------------------------
// Self-test

struct SelftestCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct SelftestReport {
  std::vector<SelftestCheck> checks;
  bool passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.passed; });
  }
};

namespace detail {

inline SparseOperator<double> random_hermitian_operator(std::size_t n, std::mt19937_64& rng) {
  std::vector<Triplet<double>> t;
  for (std::size_t r = 0; r < n; ++r) {
    t.push_back({r, r, 2.0 * uniform_unit(rng) - 1.0});
    for (std::size_t c = r + 1; c < n; ++c) {
      const std::complex<double> v(2.0 * uniform_unit(rng) - 1.0, 2.0 * uniform_unit(rng) - 1.0);
      t.push_back({r, c, v});
      t.push_back({c, r, std::conj(v)});
    }
  }
  return SparseOperator<double>::from_triplets(n, std::move(t)).with_structure(Structure::hermitian);
}

inline LogScaledState<double> random_state(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::complex<double>> a(n);
  for (auto& v : a) v = {2.0 * uniform_unit(rng) - 1.0, 2.0 * uniform_unit(rng) - 1.0};
  return LogScaledState<double>(std::move(a)).with_log_scale(0.0);
}

inline std::string sci(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", x);
  return buf;
}

}  // namespace detail

/// 2x2 (H, O, phi0) triples passing support_check: the ratio gap is exact at
/// tau in {0, 1, 10}. Propagated in binary128 so the tau = 10 point is not
/// limited by double roundoff in the commutator contraction.
inline SelftestCheck check_two_level_exactness(std::uint64_t seed, int cases = 100, double tol = 1e-10) {
  using quad = boost::multiprecision::float128;
  std::mt19937_64 rng(seed);
  int ran = 0, ok = 0;
  double worst = 0.0;
  while (ran < cases) {
    const auto h = detail::random_hermitian_operator(2, rng), o = detail::random_hermitian_operator(2, rng);
    const auto phi0 = detail::random_state(2, rng);
    const auto d = spectral_decomposition(h);
    if (d.levels() < 2 || !support_check(d, o, phi0, {1, 3}).passed()) continue;
    ++ran;
    const double exact = *exact_gaps(d).delta_e;
    const auto traj = compute_trajectory(h.cast<quad>(), o.cast<quad>(), phi0.cast<quad>(), {0.0, 1.0, 10.0}, {1},
                                         Backend::stepped);
    double err = 0.0;
    for (double tau : {0.0, 1.0, 10.0}) {
      try {
        err = std::max(err, std::abs(gap_from_ratio(traj, 1, tau).value - exact));
      } catch (const NumericalError&) {
        err = std::numeric_limits<double>::infinity();
      }
    }
    worst = std::max(worst, err);
    ok += err <= tol ? 1 : 0;
  }
  return {"two_level_exactness", ok == cases,
          std::to_string(ok) + "/" + std::to_string(cases) + " cases, max |error| " + detail::sci(worst)};
}

/// Recursive vs binomial nested commutators on random pairs, dims 4-8, m = 0..4.
inline SelftestCheck check_commutator_identity(std::uint64_t seed, const BinomialCoefficient& coeff = binomial,
                                               int pairs = 50, double tol = 1e-10) {
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (int p = 0; p < pairs; ++p) {
    const std::size_t n = 4 + std::size_t(p) % 5;
    const auto h = detail::random_hermitian_operator(n, rng), o = detail::random_hermitian_operator(n, rng);
    for (unsigned m = 0; m <= 4; ++m) {
      const auto diff = nested_commutator_recursive(h, o, m) - nested_commutator_binomial(h, o, m, coeff);
      worst = std::max(worst, diff.max_abs());
    }
  }
  return {"nested_commutator_identity", worst <= tol,
          std::to_string(pairs) + " pairs, max elementwise difference " + detail::sci(worst)};
}

namespace detail {

template <class Real>
double oracle_sweep_case(const SparseOperator<double>& h, const SparseOperator<double>& o,
                         const LogScaledState<double>& phi0, const std::vector<double>& grid) {
  const auto hr = h.cast<Real>(), orr = o.cast<Real>();
  const auto pr = phi0.cast<Real>();
  const auto d = spectral_decomposition(hr);
  const auto traj = compute_trajectory(hr, orr, pr, grid, {0, 1}, Backend::exact);
  double worst = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    for (unsigned m = 0; m <= 3; ++m) {
      worst = std::max(worst, relative_difference(traj.expectation(i, m),
                                                  expectation_via_decomposition(d, orr, pr, grid[i], m)));
    }
  }
  return worst;
}

}  // namespace detail

/// Spectral double sum vs the matvec pipeline: dims 4-16, tau in {0, 0.5, 2}, m = 0..3.
/// Both routes run in extended precision by default: <[H,O]_m> can sit many
/// decades below |[H,O]_m|, and that cancellation amplifies double roundoff
/// in either route past 1e-10 on a few percent of random cases.
inline SelftestCheck check_oracle_equivalence(std::uint64_t seed, double tol = 1e-10,
                                              Precision precision = Precision::extended) {
  if (precision == Precision::quad) throw ValidationError("oracle equivalence: quad precision is not supported");
  std::mt19937_64 rng(seed);
  const std::vector<double> grid{0.0, 0.5, 2.0};
  double worst = 0.0;
  int compared = 0;
  for (std::size_t n = 4; n <= 16; ++n) {
    const auto h = detail::random_hermitian_operator(n, rng), o = detail::random_hermitian_operator(n, rng);
    const auto phi0 = detail::random_state(n, rng);
    worst = std::max(worst, precision == Precision::double_ ? detail::oracle_sweep_case<double>(h, o, phi0, grid)
                                                            : detail::oracle_sweep_case<long double>(h, o, phi0, grid));
    compared += int(grid.size()) * 4;
  }
  return {"oracle_equivalence", worst <= tol,
          std::to_string(compared) + " comparisons (" + std::string(to_string(precision)) +
              "), max relative difference " + detail::sci(worst)};
}

/// H = diag(E0, E0, E1) with generic O and phi0: the ratio recovers E1 - E0.
inline SelftestCheck check_degenerate_ground(std::uint64_t seed, double tol = 1e-8) {
  std::mt19937_64 rng(seed);
  const double e0 = -0.5, e1 = 0.75;
  const auto h = SparseOperator<double>::diagonal(std::vector<std::complex<double>>{e0, e0, e1})
                     .with_structure(Structure::hermitian);
  const auto o = detail::random_hermitian_operator(3, rng);
  const auto phi0 = detail::random_state(3, rng);
  const auto traj = compute_trajectory(h, o, phi0, uniform_grid(0.0, 10.0, 11), {1, 2}, Backend::exact);
  double worst = 0.0;
  for (double tau : traj.tau_grid()) {
    for (unsigned m : {1U, 2U}) {
      try {
        worst = std::max(worst, std::abs(gap_from_ratio(traj, m, tau).value - (e1 - e0)));
      } catch (const NumericalError&) {
        worst = std::numeric_limits<double>::infinity();
      }
    }
  }
  return {"degenerate_ground", worst <= tol, "max |error| " + detail::sci(worst) + " over 22 estimates"};
}

inline SelftestReport run_selftest(std::uint64_t seed = 0, const BinomialCoefficient& coeff = binomial) {
  SelftestReport rep;
  rep.checks.push_back(check_two_level_exactness(seed + 1));
  rep.checks.push_back(check_commutator_identity(seed + 2, coeff));
  rep.checks.push_back(check_oracle_equivalence(seed + 3));
  rep.checks.push_back(check_degenerate_ground(seed + 4));
  return rep;
}

inline std::string format_report(const SelftestReport& rep) {
  std::ostringstream out;
  for (const auto& c : rep.checks) {
    out << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail << "\n";
  }
  out << (rep.passed() ? "selftest passed" : "selftest FAILED") << "\n";
  return out.str();
}

}  // namespace itgap
