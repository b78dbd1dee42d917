#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <thread>
#include <type_traits>
#include <vector>

#include <Eigen/Dense>

#include "itgap/dense.hpp"
#include "itgap/error.hpp"
#include "itgap/log_scaled.hpp"
#include "itgap/operator_algebra.hpp"
#include "itgap/sparse_operator.hpp"

namespace itgap {

/// Real types the dense eigensolver path accepts.
template <class Real>
inline constexpr bool kEigenReal = std::is_same_v<Real, double> || std::is_same_v<Real, long double>;

/// e^{-tau h} through a full eigendecomposition of h. Build once, then
/// propagate any number of states to any tau.
template <class Real = double>
class BasicExactPropagator {
  static_assert(kEigenReal<Real>, "exact propagation supports double and long double");
  using Complex = std::complex<Real>;
  using Matrix = Eigen::Matrix<Complex, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Complex, Eigen::Dynamic, 1>;
  using RealVector = Eigen::Matrix<Real, Eigen::Dynamic, 1>;

 public:
  explicit BasicExactPropagator(const SparseOperator<Real>& h, std::size_t dense_cap = kDenseCap) {
    if (h.dim() > dense_cap) throw ValidationError("ExactPropagator: dimension above dense cap");
    if (!h.is_hermitian()) throw ValidationError("ExactPropagator: Hamiltonian is not Hermitian");
    Eigen::SelfAdjointEigenSolver<Matrix> es(to_dense_as(h));
    if (es.info() != Eigen::Success) throw NumericalError("ExactPropagator: eigensolver failed");
    energies_ = es.eigenvalues();
    vectors_ = es.eigenvectors();
  }

  std::size_t dim() const noexcept { return std::size_t(energies_.size()); }
  const RealVector& energies() const noexcept { return energies_; }
  const Matrix& eigenvectors() const noexcept { return vectors_; }

  LogScaledState<Real> propagate(const LogScaledState<Real>& state, double tau) const {
    detail::require_same_dim(dim(), state.dim(), "ExactPropagator::propagate");
    if (!(tau >= 0.0)) throw ValidationError("ExactPropagator::propagate: tau must be >= 0");
    if (tau == 0.0) return state;
    const auto amps = state.amplitudes();
    const Vector a = Eigen::Map<const Vector>(amps.data(), Eigen::Index(amps.size()));
    Vector c = vectors_.adjoint() * a;
    const Real t = tau;
    const Real e0 = energies_(0);
    for (Eigen::Index n = 0; n < c.size(); ++n) c(n) *= std::exp(-t * (energies_(n) - e0));
    const Vector out = vectors_ * c;
    return LogScaledState<Real>(std::vector<Complex>(out.data(), out.data() + out.size()),
                                state.log_scale() - t * e0);
  }

 private:
  RealVector energies_;
  Matrix vectors_;
};

using ExactPropagator = BasicExactPropagator<double>;

template <class Real>
LogScaledState<Real> propagate_exact(const SparseOperator<Real>& h, const LogScaledState<Real>& phi0, double tau) {
  return BasicExactPropagator<Real>(h).propagate(phi0, tau);
}

/// Per-step Taylor truncation: stop once the next term's norm falls below
/// this fraction of the partial sum's norm.
template <class Real>
Real default_series_tolerance() {
  if constexpr (std::is_same_v<Real, double>) {
    return 1e-14;
  } else {
    return Real(10) * std::numeric_limits<Real>::epsilon();
  }
}

namespace detail {

template <class Real>
Real vector_norm(const std::vector<std::complex<Real>>& v) {
  using std::sqrt;
  Real s(0);
  for (const auto& x : v) s += std::norm(x);
  return sqrt(s);
}

/// Largest absolute row sum, an upper bound on the spectral radius.
template <class Real>
Real infinity_norm(const SparseOperator<Real>& h) {
  using std::abs;
  Real m(0);
  for (std::size_t r = 0; r < h.dim(); ++r) {
    Real s(0);
    for (const auto& e : h.row(r)) s += abs(e.value);
    m = std::max(m, s);
  }
  return m;
}

}  // namespace detail

/// Applies e^{-d_tau h} `steps` times by truncated Taylor series,
/// renormalizing after every step. A step is split further when
/// d_tau * |h|_inf exceeds 1 so the alternating series stays well-conditioned.
template <class Real>
LogScaledState<Real> propagate_stepped(const SparseOperator<Real>& h, const LogScaledState<Real>& state,
                                       Real d_tau, std::size_t steps,
                                       Real series_tol = default_series_tolerance<Real>()) {
  using std::ceil;
  using std::log;
  detail::require_same_dim(h.dim(), state.dim(), "propagate_stepped");
  if (!(d_tau > Real(0))) throw ValidationError("propagate_stepped: d_tau must be > 0");
  if (steps == 0) throw ValidationError("propagate_stepped: steps must be >= 1");

  const Real bound = detail::infinity_norm(h) * d_tau;
  const auto split = static_cast<std::size_t>(std::max<Real>(Real(1), ceil(bound)));
  const Real dt = d_tau / Real(split);
  constexpr std::size_t kMaxOrder = 200;

  std::vector<std::complex<Real>> psi(state.amplitudes().begin(), state.amplitudes().end());
  Real log_scale = state.log_scale();
  for (std::size_t step = 0; step < steps * split; ++step) {
    std::vector<std::complex<Real>> term = psi;
    std::vector<std::complex<Real>> sum = psi;
    std::size_t order = 1;
    for (;; ++order) {
      if (order > kMaxOrder) {
        throw NumericalError("propagate_stepped: Taylor series did not converge");
      }
      term = h.apply(term);
      const Real f = -dt / Real(order);
      for (auto& x : term) x *= f;
      for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += term[i];
      if (detail::vector_norm(term) < series_tol * detail::vector_norm(sum)) break;
    }
    const Real n = detail::vector_norm(sum);
    if (!(n > Real(0))) throw NumericalError("propagate_stepped: state norm vanished");
    for (auto& x : sum) x /= n;
    log_scale += log(n);
    psi = std::move(sum);
  }
  LogScaledState<Real> out(std::move(psi), Real(0));
  return out.with_log_scale(log_scale);
}

enum class Backend { exact, stepped };

inline std::string_view to_string(Backend b) { return b == Backend::exact ? "exact" : "stepped"; }

inline Backend parse_backend(std::string_view s) {
  if (s == "exact") return Backend::exact;
  if (s == "stepped") return Backend::stepped;
  throw ValidationError("unknown backend '" + std::string(s) + "'");
}

struct TrajectoryMetadata {
  std::string model;
  std::uint64_t seed = 0;
  std::vector<unsigned> m_list;
  Backend backend = Backend::exact;
};

/// <[H,O]_M> at every tau of a grid, for each requested M and its M+2 partner.
class Trajectory {
 public:
  Trajectory(std::vector<double> tau_grid, std::vector<std::map<unsigned, LogScaledComplex>> records,
             TrajectoryMetadata meta)
      : tau_grid_(std::move(tau_grid)), records_(std::move(records)), meta_(std::move(meta)) {
    if (records_.size() != tau_grid_.size()) {
      throw ValidationError("Trajectory: one record per grid point required");
    }
    validate_grid(tau_grid_);
    for (const auto& rec : records_) {
      for (unsigned m : meta_.m_list) {
        if (!rec.count(m) || !rec.count(m + 2)) {
          throw ValidationError("Trajectory: record missing a requested order");
        }
      }
    }
  }

  static void validate_grid(const std::vector<double>& grid) {
    if (grid.empty()) throw ValidationError("tau grid is empty");
    if (!(grid.front() >= 0.0)) throw ValidationError("tau grid must start at tau >= 0");
    for (std::size_t i = 1; i < grid.size(); ++i) {
      if (!(grid[i] > grid[i - 1])) throw ValidationError("tau grid must be strictly increasing");
    }
  }

  std::size_t size() const noexcept { return tau_grid_.size(); }
  const std::vector<double>& tau_grid() const noexcept { return tau_grid_; }
  double tau(std::size_t i) const { return tau_grid_.at(i); }
  const TrajectoryMetadata& metadata() const noexcept { return meta_; }

  bool has_order(unsigned m) const { return !records_.empty() && records_.front().count(m); }

  const LogScaledComplex& expectation(std::size_t i, unsigned m) const {
    const auto& rec = records_.at(i);
    auto it = rec.find(m);
    if (it == rec.end()) throw ValidationError("Trajectory: order " + std::to_string(m) + " not recorded");
    return it->second;
  }

  /// <[H,O]_{m+2}> / <[H,O]_m> at grid point i.
  LogScaledComplex ratio(std::size_t i, unsigned m) const {
    return expectation(i, m + 2) / expectation(i, m);
  }

  /// Grid index of `tau`, matched to 1e-9 relative.
  std::size_t index_of(double tau) const {
    for (std::size_t i = 0; i < tau_grid_.size(); ++i) {
      if (std::abs(tau_grid_[i] - tau) <= 1e-9 * std::max(1.0, std::abs(tau))) return i;
    }
    throw ValidationError("Trajectory: tau " + std::to_string(tau) + " is not on the grid");
  }

 private:
  std::vector<double> tau_grid_;
  std::vector<std::map<unsigned, LogScaledComplex>> records_;
  TrajectoryMetadata meta_;
};

/// n points spaced uniformly on [lo, hi], both ends included.
inline std::vector<double> uniform_grid(double lo, double hi, std::size_t count) {
  if (count < 2) throw ValidationError("uniform_grid: count must be >= 2");
  if (!(hi > lo)) throw ValidationError("uniform_grid: max must exceed min");
  std::vector<double> g(count);
  for (std::size_t i = 0; i < count; ++i) {
    g[i] = lo + (hi - lo) * double(i) / double(count - 1);
  }
  g.back() = hi;
  return g;
}

struct TrajectoryOptions {
  double max_step = 0.1;  // stepped backend: largest d_tau per step
  unsigned threads = 1;   // exact backend: grid points evaluated concurrently
  std::string model_tag;
  std::uint64_t seed = 0;
};

/// The nested commutators [h,o]_M for each M in `orders`, built once.
template <class Real>
std::map<unsigned, SparseOperator<Real>> nested_commutators(const SparseOperator<Real>& h,
                                                            const SparseOperator<Real>& o,
                                                            const std::set<unsigned>& orders) {
  std::map<unsigned, SparseOperator<Real>> out;
  if (orders.empty()) return out;
  SparseOperator<Real> acc = o;
  for (unsigned k = 0; k <= *orders.rbegin(); ++k) {
    if (k > 0) acc = commutator(h, acc);
    if (orders.count(k)) out.emplace(k, acc);
  }
  return out;
}

template <class Real>
Trajectory compute_trajectory(const SparseOperator<Real>& h, const SparseOperator<Real>& o,
                              const LogScaledState<Real>& phi0, const std::vector<double>& tau_grid,
                              const std::vector<unsigned>& m_list, Backend backend,
                              const TrajectoryOptions& options = {}) {
  detail::require_same_dim(h.dim(), o.dim(), "compute_trajectory");
  detail::require_same_dim(h.dim(), phi0.dim(), "compute_trajectory");
  if (m_list.empty()) throw ValidationError("compute_trajectory: m_list is empty");
  Trajectory::validate_grid(tau_grid);

  std::set<unsigned> orders;
  for (unsigned m : m_list) {
    orders.insert(m);
    orders.insert(m + 2);
  }
  const auto ops = nested_commutators(h, o, orders);

  std::vector<std::map<unsigned, LogScaledComplex>> records(tau_grid.size());
  auto record = [&](std::size_t i, const LogScaledState<Real>& psi) {
    for (const auto& [m, op] : ops) records[i].emplace(m, expectation(psi, op));
  };

  if (backend == Backend::exact) {
    if constexpr (kEigenReal<Real>) {
      const BasicExactPropagator<Real> prop(h);
      const unsigned threads = std::max(1U, options.threads);
      auto work = [&](unsigned worker) {
        for (std::size_t i = worker; i < tau_grid.size(); i += threads) {
          record(i, prop.propagate(phi0, tau_grid[i]));
        }
      };
      if (threads == 1) {
        work(0);
      } else {
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < threads; ++w) pool.emplace_back(work, w);
      }
    } else {
      throw ValidationError("compute_trajectory: exact backend requires double or long double");
    }
  } else {
    if (!(options.max_step > 0.0)) throw ValidationError("compute_trajectory: max_step must be > 0");
    LogScaledState<Real> psi = phi0;
    double prev = 0.0;
    for (std::size_t i = 0; i < tau_grid.size(); ++i) {
      const double span = tau_grid[i] - prev;
      if (span > 0.0) {
        const auto steps = static_cast<std::size_t>(std::ceil(span / options.max_step - 1e-12));
        psi = propagate_stepped(h, psi, static_cast<Real>(span) / Real(steps), std::max<std::size_t>(steps, 1));
      }
      prev = tau_grid[i];
      record(i, psi);
    }
  }

  TrajectoryMetadata meta{options.model_tag, options.seed, m_list, backend};
  return Trajectory(tau_grid, std::move(records), std::move(meta));
}

}  // namespace itgap
