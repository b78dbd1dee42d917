#pragma once

#include <cmath>
#include <complex>
#include <map>
#include <optional>
#include <type_traits>
#include <vector>

#include <Eigen/Dense>

#include "itgap/dense.hpp"
#include "itgap/error.hpp"
#include "itgap/log_scaled.hpp"
#include "itgap/sparse_operator.hpp"

namespace itgap {

/// H = sum_n E_n Pi_n over distinct energies, each Pi_n given by an
/// orthonormal block of eigenvectors. Real is double or long double.
template <class Real = double>
struct BasicSpectralDecomposition {
  using Matrix = Eigen::Matrix<std::complex<Real>, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<std::complex<Real>, Eigen::Dynamic, 1>;

  std::vector<Real> energies;
  std::vector<Matrix> blocks;
  Real degeneracy_tol = 0;

  std::size_t dim() const { return blocks.empty() ? 0 : std::size_t(blocks.front().rows()); }
  std::size_t levels() const { return energies.size(); }

  Matrix projector(std::size_t n) const { return blocks.at(n) * blocks.at(n).adjoint(); }

  /// Pi_n |v>.
  Vector project(std::size_t n, const Vector& v) const { return blocks.at(n) * (blocks.at(n).adjoint() * v); }

  /// sum_n E_n Pi_n.
  Matrix reconstruct() const {
    Matrix h = Matrix::Zero(Eigen::Index(dim()), Eigen::Index(dim()));
    for (std::size_t n = 0; n < levels(); ++n) h += energies[n] * projector(n);
    return h;
  }
};

using SpectralDecomposition = BasicSpectralDecomposition<double>;

/// Eigenvalues closer than `degeneracy_tol` to their predecessor join its
/// block. The default tolerance is 1e-8 * max|E|.
template <class Real>
BasicSpectralDecomposition<Real> spectral_decomposition(
    const SparseOperator<Real>& h, std::type_identity_t<std::optional<Real>> degeneracy_tol = std::nullopt,
    std::size_t dense_cap = kDenseCap) {
  static_assert(std::is_same_v<Real, double> || std::is_same_v<Real, long double>);
  using Matrix = typename BasicSpectralDecomposition<Real>::Matrix;
  if (h.dim() > dense_cap) throw ValidationError("spectral_decomposition: dimension above dense cap");
  if (!h.is_hermitian()) throw ValidationError("spectral_decomposition: operator is not Hermitian");
  Eigen::SelfAdjointEigenSolver<Matrix> es(to_dense_as(h));
  if (es.info() != Eigen::Success) throw NumericalError("spectral_decomposition: eigensolver failed");
  const auto& w = es.eigenvalues();
  const Matrix& v = es.eigenvectors();
  const Real tol = degeneracy_tol.value_or(Real(1e-8) * w.cwiseAbs().maxCoeff());

  BasicSpectralDecomposition<Real> d;
  d.degeneracy_tol = tol;
  Eigen::Index start = 0;
  for (Eigen::Index i = 1; i <= w.size(); ++i) {
    if (i == w.size() || w(i) - w(i - 1) > tol) {
      d.energies.push_back(w.segment(start, i - start).mean());
      d.blocks.push_back(v.middleCols(start, i - start));
      start = i;
    }
  }
  return d;
}

struct ExactGaps {
  std::optional<double> delta_e;     // E1 - E0
  std::optional<double> energy_sum;  // E0 + E1
  std::optional<double> second_gap;  // E2 - E1
};

template <class Real>
ExactGaps exact_gaps(const BasicSpectralDecomposition<Real>& d) {
  ExactGaps g;
  const auto& e = d.energies;
  if (e.size() >= 2) {
    g.delta_e = double(e[1] - e[0]);
    g.energy_sum = double(e[0] + e[1]);
  }
  if (e.size() >= 3) g.second_gap = double(e[2] - e[1]);
  return g;
}

namespace detail {

template <class Real>
Eigen::Matrix<std::complex<Real>, Eigen::Dynamic, 1> as_vector(const LogScaledState<Real>& s) {
  using Vector = Eigen::Matrix<std::complex<Real>, Eigen::Dynamic, 1>;
  const auto a = s.amplitudes();
  return Eigen::Map<const Vector>(a.data(), Eigen::Index(a.size()));
}

}  // namespace detail

/// Full double sum over distinct-energy pairs:
///   sum_{l,k} e^{-tau (E_l + E_k)} (E_l - E_k)^m <phi0|Pi_l O Pi_k|phi0>,
/// accumulated term by term in log-scaled form.
template <class Real>
LogScaledComplex expectation_via_decomposition(const BasicSpectralDecomposition<Real>& d,
                                               const SparseOperator<Real>& o, const LogScaledState<Real>& phi0,
                                               double tau, unsigned m) {
  using Vector = typename BasicSpectralDecomposition<Real>::Vector;
  detail::require_same_dim(d.dim(), o.dim(), "expectation_via_decomposition");
  detail::require_same_dim(d.dim(), phi0.dim(), "expectation_via_decomposition");
  const auto od = to_dense_as(o);
  const Vector phi = detail::as_vector(phi0);
  std::vector<Vector> proj;
  for (std::size_t n = 0; n < d.levels(); ++n) proj.push_back(d.project(n, phi));

  LogScaledComplex sum;
  for (std::size_t l = 0; l < d.levels(); ++l) {
    for (std::size_t k = 0; k < d.levels(); ++k) {
      if (m > 0 && l == k) continue;  // (E_l - E_k)^m = 0
      const std::complex<Real> elem = proj[l].dot(od * proj[k]);
      const Real factor = std::pow(d.energies[l] - d.energies[k], Real(m));
      sum = sum + LogScaledComplex::from_complex<Real>(
                      factor * elem, -Real(tau) * (d.energies[l] + d.energies[k]) + 2 * phi0.log_scale());
    }
  }
  return sum;
}

/// The (0,1) + (1,0) terms of the sum above: the leading asymptotic part.
template <class Real>
LogScaledComplex leading_pair_expectation(const BasicSpectralDecomposition<Real>& d, const SparseOperator<Real>& o,
                                          const LogScaledState<Real>& phi0, double tau, unsigned m) {
  using Vector = typename BasicSpectralDecomposition<Real>::Vector;
  if (d.levels() < 2) throw ValidationError("leading_pair_expectation: needs two distinct energies");
  const auto od = to_dense_as(o);
  const Vector phi = detail::as_vector(phi0);
  const Vector p0 = d.project(0, phi), p1 = d.project(1, phi);
  const Real diff = d.energies[0] - d.energies[1];
  const std::complex<Real> val =
      std::pow(diff, Real(m)) * p0.dot(od * p1) + std::pow(-diff, Real(m)) * p1.dot(od * p0);
  return LogScaledComplex::from_complex<Real>(val, -Real(tau) * (d.energies[0] + d.energies[1]) +
                                                       2 * phi0.log_scale());
}

struct SupportReport {
  double cross_term = 0.0;  // |<phi0|Pi_0 O Pi_1|phi0>|
  bool cross_term_ok = false;
  std::map<unsigned, double> commutator_norms;  // Frobenius norm of [H,O]_m
  std::map<unsigned, bool> commutator_ok;
  double floor = 1e-10;

  bool passed() const {
    if (!cross_term_ok) return false;
    for (const auto& [m, ok] : commutator_ok) {
      if (!ok) return false;
    }
    return true;
  }
};

/// Checks the hypotheses the ratio estimator relies on. Commutator norms are
/// evaluated in the eigenbasis, where ([H,O]_m)_{rc} = (E_r - E_c)^m O_rc.
template <class Real>
SupportReport support_check(const BasicSpectralDecomposition<Real>& d, const SparseOperator<Real>& o,
                            const LogScaledState<Real>& phi0, const std::vector<unsigned>& orders,
                            double floor = 1e-10) {
  using Matrix = typename BasicSpectralDecomposition<Real>::Matrix;
  using Vector = typename BasicSpectralDecomposition<Real>::Vector;
  if (d.levels() < 2) throw ValidationError("support_check: needs two distinct energies");
  detail::require_same_dim(d.dim(), o.dim(), "support_check");
  detail::require_same_dim(d.dim(), phi0.dim(), "support_check");
  const auto od = to_dense_as(o);
  const Vector phi = detail::as_vector(phi0);

  SupportReport rep;
  rep.floor = floor;
  rep.cross_term = double(std::abs(d.project(0, phi).dot(od * d.project(1, phi))));
  rep.cross_term_ok = rep.cross_term > floor;

  const auto n = Eigen::Index(d.dim());
  Matrix basis(n, n);
  std::vector<Real> level_energy;
  Eigen::Index col = 0;
  for (std::size_t l = 0; l < d.levels(); ++l) {
    basis.middleCols(col, d.blocks[l].cols()) = d.blocks[l];
    col += d.blocks[l].cols();
    level_energy.insert(level_energy.end(), std::size_t(d.blocks[l].cols()), d.energies[l]);
  }
  const Matrix oe = basis.adjoint() * od * basis;
  for (unsigned m : orders) {
    Real s = 0;
    for (Eigen::Index r = 0; r < n; ++r) {
      for (Eigen::Index c = 0; c < n; ++c) {
        const Real diff = level_energy[std::size_t(r)] - level_energy[std::size_t(c)];
        if (m > 0 && diff == 0) continue;
        s += std::pow(std::abs(diff), Real(2 * m)) * std::norm(oe(r, c));
      }
    }
    rep.commutator_norms[m] = double(std::sqrt(s));
    rep.commutator_ok[m] = rep.commutator_norms[m] > floor;
  }
  return rep;
}

/// Weight of the normalized state inside the ground eigenspace.
template <class Real>
double ground_space_fidelity(const BasicSpectralDecomposition<Real>& d, const LogScaledState<Real>& state) {
  return double((d.blocks.at(0).adjoint() * detail::as_vector(state)).squaredNorm());
}

}  // namespace itgap
