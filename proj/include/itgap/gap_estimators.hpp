#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "itgap/error.hpp"
#include "itgap/imaginary_time.hpp"
#include "itgap/log_scaled.hpp"

namespace itgap {

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  double slope_stderr = 0.0;  // zero for two points
  std::size_t points = 0;
};

/// Ordinary least squares through (x, y) pairs.
inline LineFit fit_line(std::span<const std::pair<double, double>> pts) {
  if (pts.size() < 2) throw ValidationError("fit_line: need at least 2 points");
  const double n = double(pts.size());
  double mx = 0.0, my = 0.0;
  for (const auto& [x, y] : pts) {
    mx += x;
    my += y;
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (const auto& [x, y] : pts) {
    sxx += (x - mx) * (x - mx);
    sxy += (x - mx) * (y - my);
    syy += (y - my) * (y - my);
  }
  if (!(sxx > 0.0)) throw ValidationError("fit_line: abscissae are degenerate");
  LineFit f;
  f.points = pts.size();
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double ss_res = 0.0;
  for (const auto& [x, y] : pts) {
    const double r = y - (f.intercept + f.slope * x);
    ss_res += r * r;
  }
  f.r_squared = syy > 0.0 ? 1.0 - ss_res / syy : 1.0;
  f.slope_stderr = pts.size() > 2 ? std::sqrt(ss_res / (n - 2.0) / sxx) : 0.0;
  return f;
}

inline LineFit fit_line(const std::vector<std::pair<double, double>>& pts) {
  return fit_line(std::span<const std::pair<double, double>>(pts));
}

/// |exact - estimate| / exact. The denominator keeps its sign, so a
/// negative exact value yields a negative error.
inline double relative_error(double exact, double estimate) {
  if (exact == 0.0) throw ValidationError("relative_error: exact value is zero");
  return std::abs(exact - estimate) / exact;
}

struct FitWindow {
  double tau_min = 0.0;
  double tau_max = 0.0;

  FitWindow() = default;
  FitWindow(double lo, double hi) : tau_min(lo), tau_max(hi) {
    if (!(lo < hi)) throw ValidationError("FitWindow: tau_min must be < tau_max");
  }

  bool contains(double tau) const { return tau >= tau_min - 1e-12 && tau <= tau_max + 1e-12; }
};

inline const FitWindow kDefaultEnergySumWindow{10.0, 20.0};
inline const FitWindow kDefaultSecondGapWindow{2.0, 8.0};

enum class Quantity { gap, energy_sum, second_gap };
enum class Method { ratio, log_slope };
enum class TauSelection { largest_tau, min_slope };

inline std::string_view to_string(Quantity q) {
  switch (q) {
    case Quantity::gap: return "gap";
    case Quantity::energy_sum: return "energy_sum";
    case Quantity::second_gap: return "second_gap";
  }
  return "?";
}
inline std::string_view to_string(Method m) { return m == Method::ratio ? "ratio" : "log_slope"; }
inline std::string_view to_string(TauSelection s) {
  return s == TauSelection::largest_tau ? "largest_tau" : "min_slope";
}
inline TauSelection parse_tau_selection(std::string_view s) {
  if (s == "largest_tau") return TauSelection::largest_tau;
  if (s == "min_slope") return TauSelection::min_slope;
  throw ValidationError("unknown tau selection mode '" + std::string(s) + "'");
}

inline constexpr double kImagFractionWarning = 0.01;

struct GapDiagnostics {
  std::optional<double> imag_fraction;  // |Im r| / |r| (ratio method)
  std::optional<double> r_squared;      // log-slope methods
  std::optional<double> slope_stderr;
  std::size_t point_count = 0;
  std::vector<std::string> warnings;
};

struct GapEstimate {
  Quantity quantity = Quantity::gap;
  double value = 0.0;
  Method method = Method::ratio;
  std::optional<double> tau_used;
  std::optional<FitWindow> window;
  unsigned order = 0;
  GapDiagnostics diagnostics;
};

namespace detail {

inline void require_orders(const Trajectory& traj, unsigned m) {
  if (!traj.has_order(m) || !traj.has_order(m + 2)) {
    throw ValidationError("trajectory lacks orders " + std::to_string(m) + " and " + std::to_string(m + 2));
  }
}

inline std::vector<std::size_t> window_indices(const Trajectory& traj, const FitWindow& w) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < traj.size(); ++i) {
    if (w.contains(traj.tau(i))) idx.push_back(i);
  }
  return idx;
}

/// Re r at grid index i, or nullopt where the denominator vanishes.
inline std::optional<LogScaledComplex> try_ratio(const Trajectory& traj, std::size_t i, unsigned m) {
  if (traj.expectation(i, m).is_zero()) return std::nullopt;
  return traj.ratio(i, m);
}

}  // namespace detail

/// Delta E = sqrt(Re r), r = <[H,O]_{m+2}> / <[H,O]_m> at a grid tau.
inline GapEstimate gap_from_ratio(const Trajectory& traj, unsigned m, double tau) {
  detail::require_orders(traj, m);
  const std::size_t i = traj.index_of(tau);
  const auto r = detail::try_ratio(traj, i, m);
  if (!r) throw NumericalError("gap_from_ratio: <[H,O]_m> is exactly zero");
  const std::complex<double> rv = r->to_complex();
  if (!(rv.real() > 0.0)) {
    throw NumericalError("gap_from_ratio: Re r <= 0 at tau = " + std::to_string(traj.tau(i)) +
                         " (pre-asymptotic or invalid regime)");
  }
  GapEstimate est;
  est.quantity = Quantity::gap;
  est.method = Method::ratio;
  est.order = m;
  est.tau_used = traj.tau(i);
  est.value = std::sqrt(rv.real());
  est.diagnostics.imag_fraction = std::abs(rv.imag()) / std::abs(rv);
  est.diagnostics.point_count = 1;
  if (*est.diagnostics.imag_fraction > kImagFractionWarning) {
    est.diagnostics.warnings.push_back("ratio imaginary fraction exceeds 1%");
  }
  return est;
}

/// Picks the grid tau used for the headline gap. largest_tau takes the last
/// window point with Re r > 0; min_slope takes the point where the central
/// difference |dr/dtau| is smallest.
inline double select_tau(const Trajectory& traj, unsigned m, const FitWindow& window, TauSelection mode) {
  detail::require_orders(traj, m);
  const auto idx = detail::window_indices(traj, window);
  auto valid = [&](std::size_t i) {
    auto r = detail::try_ratio(traj, i, m);
    return r && r->to_complex().real() > 0.0;
  };
  if (mode == TauSelection::largest_tau) {
    for (auto it = idx.rbegin(); it != idx.rend(); ++it) {
      if (valid(*it)) return traj.tau(*it);
    }
    throw NumericalError("select_tau: no grid point with Re r > 0 in window");
  }
  std::optional<std::size_t> best;
  double best_slope = std::numeric_limits<double>::infinity();
  for (std::size_t i : idx) {
    if (i == 0 || i + 1 >= traj.size() || !valid(i)) continue;
    auto lo = detail::try_ratio(traj, i - 1, m), hi = detail::try_ratio(traj, i + 1, m);
    if (!lo || !hi) continue;
    const double slope = std::abs(hi->to_complex().real() - lo->to_complex().real()) /
                         (traj.tau(i + 1) - traj.tau(i - 1));
    if (slope < best_slope) {
      best_slope = slope;
      best = i;
    }
  }
  if (!best) throw NumericalError("select_tau: no interior grid point with Re r > 0 in window");
  return traj.tau(*best);
}

/// E0 + E1 = -slope of ln|<[H,O]_m>| against tau.
inline GapEstimate sum_from_log_slope(const Trajectory& traj, unsigned m,
                                      const FitWindow& window = kDefaultEnergySumWindow) {
  if (!traj.has_order(m)) throw ValidationError("sum_from_log_slope: order not recorded");
  std::vector<std::pair<double, double>> pts;
  for (std::size_t i : detail::window_indices(traj, window)) {
    const auto& v = traj.expectation(i, m);
    if (v.is_zero()) {
      throw NumericalError("sum_from_log_slope: zero expectation at tau = " + std::to_string(traj.tau(i)));
    }
    pts.emplace_back(traj.tau(i), v.log_abs());
  }
  if (pts.size() < 3) throw ValidationError("sum_from_log_slope: fewer than 3 points in window");
  const LineFit f = fit_line(pts);
  GapEstimate est;
  est.quantity = Quantity::energy_sum;
  est.method = Method::log_slope;
  est.order = m;
  est.window = window;
  est.value = -f.slope;
  est.diagnostics.r_squared = f.r_squared;
  est.diagnostics.slope_stderr = f.slope_stderr;
  est.diagnostics.point_count = pts.size();
  return est;
}

/// E2 - E1 = -slope of ln|Re r(tau) - delta_e^2| against tau. Points where
/// the difference is exactly zero (or the ratio is undefined) are dropped.
inline GapEstimate second_gap(const Trajectory& traj, unsigned m, double delta_e,
                              const FitWindow& window = kDefaultSecondGapWindow) {
  detail::require_orders(traj, m);
  std::vector<std::pair<double, double>> pts;
  std::size_t dropped = 0;
  for (std::size_t i : detail::window_indices(traj, window)) {
    const auto r = detail::try_ratio(traj, i, m);
    const double diff = r ? r->to_complex().real() - delta_e * delta_e : 0.0;
    if (!r || diff == 0.0 || !std::isfinite(diff)) {
      ++dropped;
      continue;
    }
    pts.emplace_back(traj.tau(i), std::log(std::abs(diff)));
  }
  if (pts.size() < 3) throw NumericalError("second_gap: fewer than 3 usable points in window");
  const LineFit f = fit_line(pts);
  GapEstimate est;
  est.quantity = Quantity::second_gap;
  est.method = Method::log_slope;
  est.order = m;
  est.window = window;
  est.value = -f.slope;
  est.diagnostics.r_squared = f.r_squared;
  est.diagnostics.slope_stderr = f.slope_stderr;
  est.diagnostics.point_count = pts.size();
  if (dropped > 0) {
    est.diagnostics.warnings.push_back(std::to_string(dropped) + " point(s) dropped from fit");
  }
  return est;
}

/// epsilon(tau) of the ratio gap against an exact value at every grid point;
/// empty where the ratio is undefined or Re r <= 0.
inline std::vector<std::optional<double>> epsilon_curve(const Trajectory& traj, unsigned m, double exact_gap) {
  detail::require_orders(traj, m);
  std::vector<std::optional<double>> eps(traj.size());
  for (std::size_t i = 0; i < traj.size(); ++i) {
    const auto r = detail::try_ratio(traj, i, m);
    if (!r || !(r->to_complex().real() > 0.0)) continue;
    eps[i] = relative_error(exact_gap, std::sqrt(r->to_complex().real()));
  }
  return eps;
}

/// Line through (tau, ln|epsilon|) over a window; zero and undefined points are skipped.
inline LineFit epsilon_decay_fit(const Trajectory& traj, unsigned m, double exact_gap, const FitWindow& window) {
  const auto eps = epsilon_curve(traj, m, exact_gap);
  std::vector<std::pair<double, double>> pts;
  for (std::size_t i : detail::window_indices(traj, window)) {
    if (eps[i] && *eps[i] != 0.0) pts.emplace_back(traj.tau(i), std::log(std::abs(*eps[i])));
  }
  if (pts.size() < 3) throw NumericalError("epsilon_decay_fit: fewer than 3 usable points in window");
  return fit_line(pts);
}

}  // namespace itgap
