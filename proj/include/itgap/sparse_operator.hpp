#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <span>
#include <type_traits>
#include <utility>
#include <vector>

#include "itgap/error.hpp"

namespace itgap {

/// Entries with magnitude below this are pruned after every sum or product.
/// 1e-14 for double; for wider types the cut scales with machine epsilon
/// so extended precision is not thrown away.
template <class Real>
Real default_drop_tolerance() {
  if constexpr (std::is_same_v<Real, double>) {
    return 1e-14;
  } else {
    return Real(100) * std::numeric_limits<Real>::epsilon();
  }
}

/// Tolerance used when verifying a Hermitian / anti-Hermitian tag, relative
/// to max(1, largest entry magnitude).
template <class Real>
Real structure_tolerance() {
  if constexpr (std::is_same_v<Real, double>) {
    return 1e-12;
  } else {
    return Real(1e4) * std::numeric_limits<Real>::epsilon();
  }
}

enum class Structure { general, hermitian, anti_hermitian };

template <class Real>
struct Triplet {
  std::size_t row;
  std::size_t col;
  std::complex<Real> value;
};

/// Complex sparse matrix on a finite Hilbert space, stored row-compressed with
/// sorted column indices. Immutable once built.
template <class Real = double>
class SparseOperator {
 public:
  using real_type = Real;
  using value_type = std::complex<Real>;

  struct Entry {
    std::size_t col;
    value_type value;
  };

  SparseOperator() : row_ptr_(1, 0) {}

  /// Zero operator of the given dimension.
  explicit SparseOperator(std::size_t dim) : dim_(dim), row_ptr_(dim + 1, 0) {
    if (dim == 0) throw ValidationError("SparseOperator: dimension must be positive");
  }

  /// Duplicate (row, col) pairs are summed; small results are pruned.
  static SparseOperator from_triplets(std::size_t dim, std::vector<Triplet<Real>> triplets,
                                      Real drop_tol = default_drop_tolerance<Real>()) {
    SparseOperator op(dim);
    for (const auto& t : triplets) {
      if (t.row >= dim || t.col >= dim) {
        throw DimensionError("SparseOperator::from_triplets: index out of range");
      }
    }
    std::sort(triplets.begin(), triplets.end(), [](const auto& a, const auto& b) {
      return a.row != b.row ? a.row < b.row : a.col < b.col;
    });
    std::size_t i = 0;
    for (std::size_t r = 0; r < dim; ++r) {
      while (i < triplets.size() && triplets[i].row == r) {
        const std::size_t c = triplets[i].col;
        value_type sum{};
        while (i < triplets.size() && triplets[i].row == r && triplets[i].col == c) {
          sum += triplets[i].value;
          ++i;
        }
        if (keep(sum, drop_tol)) op.entries_.push_back({c, sum});
      }
      op.row_ptr_[r + 1] = op.entries_.size();
    }
    return op;
  }

  static SparseOperator identity(std::size_t dim) {
    std::vector<value_type> ones(dim, value_type(1));
    auto op = diagonal(ones);
    op.structure_ = Structure::hermitian;
    return op;
  }

  static SparseOperator diagonal(std::span<const value_type> diag) {
    SparseOperator op(diag.size());
    for (std::size_t r = 0; r < diag.size(); ++r) {
      if (keep(diag[r], default_drop_tolerance<Real>())) op.entries_.push_back({r, diag[r]});
      op.row_ptr_[r + 1] = op.entries_.size();
    }
    return op;
  }

  std::size_t dim() const noexcept { return dim_; }
  std::size_t nnz() const noexcept { return entries_.size(); }
  Structure structure() const noexcept { return structure_; }

  std::span<const Entry> row(std::size_t r) const {
    return {entries_.data() + row_ptr_[r], entries_.data() + row_ptr_[r + 1]};
  }

  value_type entry(std::size_t r, std::size_t c) const {
    if (r >= dim_ || c >= dim_) throw DimensionError("SparseOperator::entry: index out of range");
    const auto rr = row(r);
    auto it = std::lower_bound(rr.begin(), rr.end(), c,
                               [](const Entry& e, std::size_t col) { return e.col < col; });
    return (it != rr.end() && it->col == c) ? it->value : value_type{};
  }

  Real max_abs() const {
    using std::abs;
    Real m(0);
    for (const auto& e : entries_) m = std::max<Real>(m, abs(e.value));
    return m;
  }

  Real frobenius_norm() const {
    using std::sqrt;
    Real s(0);
    for (const auto& e : entries_) s += std::norm(e.value);
    return sqrt(s);
  }

  bool is_zero() const noexcept { return entries_.empty(); }

  /// Checks a_rc = sign * conj(a_cr) for every stored entry.
  bool satisfies(Structure s, Real tol = structure_tolerance<Real>()) const {
    using std::abs;
    if (s == Structure::general) return true;
    const Real sign = s == Structure::hermitian ? Real(1) : Real(-1);
    const Real scaled = tol * std::max<Real>(Real(1), max_abs());
    for (std::size_t r = 0; r < dim_; ++r) {
      for (const auto& e : row(r)) {
        if (abs(e.value - sign * std::conj(entry(e.col, r))) > scaled) return false;
      }
    }
    return true;
  }

  bool is_hermitian(Real tol = structure_tolerance<Real>()) const {
    return satisfies(Structure::hermitian, tol);
  }
  bool is_anti_hermitian(Real tol = structure_tolerance<Real>()) const {
    return satisfies(Structure::anti_hermitian, tol);
  }

  /// Returns a copy tagged with `s`; the tag is verified, never assumed.
  SparseOperator with_structure(Structure s) const {
    if (!satisfies(s)) {
      throw ValidationError(s == Structure::hermitian
                                ? "SparseOperator: operator is not Hermitian"
                                : "SparseOperator: operator is not anti-Hermitian");
    }
    SparseOperator out = *this;
    out.structure_ = s;
    return out;
  }

  SparseOperator adjoint() const {
    std::vector<Triplet<Real>> t;
    t.reserve(nnz());
    for (std::size_t r = 0; r < dim_; ++r) {
      for (const auto& e : row(r)) t.push_back({e.col, r, std::conj(e.value)});
    }
    auto out = from_triplets(dim_, std::move(t));
    out.structure_ = structure_;
    return out;
  }

  template <class Other>
  SparseOperator<Other> cast() const {
    std::vector<Triplet<Other>> t;
    t.reserve(nnz());
    for (std::size_t r = 0; r < dim_; ++r) {
      for (const auto& e : row(r)) {
        t.push_back({r, e.col,
                     std::complex<Other>(static_cast<Other>(e.value.real()),
                                         static_cast<Other>(e.value.imag()))});
      }
    }
    auto out = SparseOperator<Other>::from_triplets(dim_, std::move(t));
    return out.with_structure(structure_);
  }

  std::vector<value_type> apply(std::span<const value_type> x) const {
    detail::require_same_dim(dim_, x.size(), "SparseOperator::apply");
    std::vector<value_type> y(dim_);
    for (std::size_t r = 0; r < dim_; ++r) {
      value_type acc{};
      for (const auto& e : row(r)) acc += e.value * x[e.col];
      y[r] = acc;
    }
    return y;
  }

  friend SparseOperator operator+(const SparseOperator& a, const SparseOperator& b) {
    return combine(a, value_type(1), b, value_type(1));
  }

  friend SparseOperator operator-(const SparseOperator& a, const SparseOperator& b) {
    return combine(a, value_type(1), b, value_type(-1));
  }

  friend SparseOperator operator*(value_type s, const SparseOperator& a) {
    SparseOperator out(a.dim_);
    for (std::size_t r = 0; r < a.dim_; ++r) {
      for (const auto& e : a.row(r)) {
        const value_type v = s * e.value;
        if (keep(v, default_drop_tolerance<Real>())) out.entries_.push_back({e.col, v});
      }
      out.row_ptr_[r + 1] = out.entries_.size();
    }
    if (s.imag() == Real(0)) out.structure_ = a.structure_;
    return out;
  }

  friend SparseOperator operator*(Real s, const SparseOperator& a) { return value_type(s) * a; }

  /// Row-by-row product with a sparse accumulator.
  friend SparseOperator operator*(const SparseOperator& a, const SparseOperator& b) {
    detail::require_same_dim(a.dim_, b.dim_, "SparseOperator product");
    const std::size_t n = a.dim_;
    SparseOperator out(n);
    std::vector<value_type> acc(n);
    std::vector<char> used(n, 0);
    std::vector<std::size_t> touched;
    for (std::size_t r = 0; r < n; ++r) {
      touched.clear();
      for (const auto& ea : a.row(r)) {
        for (const auto& eb : b.row(ea.col)) {
          if (!used[eb.col]) {
            used[eb.col] = 1;
            touched.push_back(eb.col);
          }
          acc[eb.col] += ea.value * eb.value;
        }
      }
      std::sort(touched.begin(), touched.end());
      for (std::size_t c : touched) {
        if (keep(acc[c], default_drop_tolerance<Real>())) out.entries_.push_back({c, acc[c]});
        acc[c] = value_type{};
        used[c] = 0;
      }
      out.row_ptr_[r + 1] = out.entries_.size();
    }
    return out;
  }

 private:
  static bool keep(const value_type& v, Real tol) {
    using std::abs;
    return abs(v) >= tol && abs(v) != Real(0);
  }

  static SparseOperator combine(const SparseOperator& a, value_type sa, const SparseOperator& b,
                                value_type sb) {
    detail::require_same_dim(a.dim_, b.dim_, "SparseOperator sum");
    SparseOperator out(a.dim_);
    const Real tol = default_drop_tolerance<Real>();
    for (std::size_t r = 0; r < a.dim_; ++r) {
      auto ia = a.row(r).begin(), ea = a.row(r).end();
      auto ib = b.row(r).begin(), eb = b.row(r).end();
      while (ia != ea || ib != eb) {
        std::size_t c;
        value_type v{};
        if (ib == eb || (ia != ea && ia->col < ib->col)) {
          c = ia->col;
          v = sa * ia->value;
          ++ia;
        } else if (ia == ea || ib->col < ia->col) {
          c = ib->col;
          v = sb * ib->value;
          ++ib;
        } else {
          c = ia->col;
          v = sa * ia->value + sb * ib->value;
          ++ia;
          ++ib;
        }
        if (keep(v, tol)) out.entries_.push_back({c, v});
      }
      out.row_ptr_[r + 1] = out.entries_.size();
    }
    if (sa.imag() == Real(0) && sb.imag() == Real(0) && a.structure_ == b.structure_) {
      out.structure_ = a.structure_;
    }
    return out;
  }

  std::size_t dim_ = 0;
  std::vector<std::size_t> row_ptr_;
  std::vector<Entry> entries_;
  Structure structure_ = Structure::general;
};

}  // namespace itgap
