#pragma once

#include <complex>
#include <cstdint>
#include <functional>
#include <vector>

#include "itgap/error.hpp"
#include "itgap/log_scaled.hpp"
#include "itgap/sparse_operator.hpp"

namespace itgap {

/// Exact binomial coefficient C(m, k) for m <= 64 (Pascal row, no overflow).
inline std::uint64_t binomial(unsigned m, unsigned k) {
  if (m > 64) throw ValidationError("binomial: m > 64 is not supported");
  if (k > m) return 0;
  std::vector<std::uint64_t> row(m + 1, 0);
  row[0] = 1;
  for (unsigned n = 1; n <= m; ++n) {
    for (unsigned j = n; j > 0; --j) row[j] += row[j - 1];
  }
  return row[k];
}

/// ab - ba. When both inputs are tagged Hermitian the result carries the
/// anti-Hermitian tag; Hermitian with anti-Hermitian gives Hermitian.
template <class Real>
SparseOperator<Real> commutator(const SparseOperator<Real>& a, const SparseOperator<Real>& b) {
  detail::require_same_dim(a.dim(), b.dim(), "commutator");
  auto c = a * b - b * a;
  const auto sa = a.structure(), sb = b.structure();
  if (sa == Structure::general || sb == Structure::general) return c;
  return c.with_structure(sa == sb ? Structure::anti_hermitian : Structure::hermitian);
}

/// [h, [h, ... [h, o]]] with m brackets; m = 0 returns o.
template <class Real>
SparseOperator<Real> nested_commutator_recursive(const SparseOperator<Real>& h,
                                                 const SparseOperator<Real>& o, unsigned m) {
  detail::require_same_dim(h.dim(), o.dim(), "nested_commutator_recursive");
  SparseOperator<Real> acc = o;
  for (unsigned i = 0; i < m; ++i) acc = commutator(h, acc);
  return acc;
}

using BinomialCoefficient = std::function<std::uint64_t(unsigned, unsigned)>;

/// sum_k (-1)^k C(m,k) h^(m-k) o h^k. `coeff` is overridable so the
/// equivalence check can be mutation-tested.
template <class Real>
SparseOperator<Real> nested_commutator_binomial(const SparseOperator<Real>& h,
                                                const SparseOperator<Real>& o, unsigned m,
                                                const BinomialCoefficient& coeff = binomial) {
  detail::require_same_dim(h.dim(), o.dim(), "nested_commutator_binomial");
  std::vector<SparseOperator<Real>> powers;
  powers.reserve(m + 1);
  powers.push_back(SparseOperator<Real>::identity(h.dim()));
  for (unsigned k = 1; k <= m; ++k) powers.push_back(powers.back() * h);

  SparseOperator<Real> sum(h.dim());
  for (unsigned k = 0; k <= m; ++k) {
    const Real c = static_cast<Real>(coeff(m, k)) * (k % 2 == 0 ? Real(1) : Real(-1));
    sum = sum + c * (powers[m - k] * o * powers[k]);
  }
  return sum;
}

/// <psi|op|psi> for the unnormalized state exp(log_scale) * amplitudes.
template <class Real>
LogScaledComplex expectation(const LogScaledState<Real>& state, const SparseOperator<Real>& op) {
  detail::require_same_dim(state.dim(), op.dim(), "expectation");
  const auto a = state.amplitudes();
  std::complex<Real> acc{};
  for (std::size_t r = 0; r < op.dim(); ++r) {
    std::complex<Real> row_sum{};
    for (const auto& e : op.row(r)) row_sum += e.value * a[e.col];
    acc += std::conj(a[r]) * row_sum;
  }
  return LogScaledComplex::from_complex<Real>(acc, Real(2) * state.log_scale());
}

}  // namespace itgap
