#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include "itgap/error.hpp"

namespace itgap {

/// Complex number stored as mantissa * exp(log_magnitude), with |mantissa| in
/// [1, e) or exactly zero. Imaginary-time expectations scale like
/// exp(-2 tau E0) and leave the double range long before the data stops being
/// useful; this keeps them representable.
class LogScaledComplex {
 public:
  LogScaledComplex() = default;

  /// Packs z * exp(extra_log). The mantissa is normalized against z alone so
  /// the exponent shift from `extra_log` is carried verbatim.
  template <class Real>
  static LogScaledComplex from_complex(const std::complex<Real>& z, Real extra_log = Real(0)) {
    using std::abs;
    using std::exp;
    using std::floor;
    using std::log;
    const Real mag = abs(z);
    if (mag == Real(0)) return {};
    const Real ln = log(mag);
    const Real k = floor(ln);
    const std::complex<Real> m = (z / mag) * exp(ln - k);
    return LogScaledComplex(std::complex<double>(static_cast<double>(m.real()),
                                                 static_cast<double>(m.imag())),
                            static_cast<double>(k + extra_log));
  }

  static LogScaledComplex from_complex(const std::complex<double>& z) {
    return from_complex<double>(z, 0.0);
  }

  /// Raw constructor; renormalizes so the mantissa invariant holds.
  LogScaledComplex(std::complex<double> mantissa, double log_magnitude)
      : mantissa_(mantissa), log_magnitude_(log_magnitude) {
    normalize();
  }

  const std::complex<double>& mantissa() const noexcept { return mantissa_; }
  double log_magnitude() const noexcept { return is_zero() ? 0.0 : log_magnitude_; }
  bool is_zero() const noexcept { return mantissa_ == std::complex<double>{}; }

  /// ln|value|; -inf for zero.
  double log_abs() const {
    if (is_zero()) return -std::numeric_limits<double>::infinity();
    return log_magnitude_ + std::log(std::abs(mantissa_));
  }

  /// Unit-modulus phase factor; zero for a zero value.
  std::complex<double> phase() const {
    if (is_zero()) return {};
    return mantissa_ / std::abs(mantissa_);
  }

  /// Ordinary complex value; may overflow to inf or underflow to 0.
  std::complex<double> to_complex() const {
    if (is_zero()) return {};
    return mantissa_ * std::exp(log_magnitude_);
  }

  LogScaledComplex operator-() const { return {-mantissa_, log_magnitude_}; }

  friend LogScaledComplex operator*(const LogScaledComplex& a, const LogScaledComplex& b) {
    if (a.is_zero() || b.is_zero()) return {};
    return {a.mantissa_ * b.mantissa_, a.log_magnitude_ + b.log_magnitude_};
  }

  friend LogScaledComplex operator/(const LogScaledComplex& a, const LogScaledComplex& b) {
    if (b.is_zero()) throw NumericalError("LogScaledComplex: division by zero");
    if (a.is_zero()) return {};
    return {a.mantissa_ / b.mantissa_, a.log_magnitude_ - b.log_magnitude_};
  }

  friend LogScaledComplex operator+(const LogScaledComplex& a, const LogScaledComplex& b) {
    if (a.is_zero()) return b;
    if (b.is_zero()) return a;
    const double top = std::max(a.log_magnitude_, b.log_magnitude_);
    const auto sum = a.mantissa_ * std::exp(a.log_magnitude_ - top) +
                     b.mantissa_ * std::exp(b.log_magnitude_ - top);
    if (sum == std::complex<double>{}) return {};
    return {sum, top};
  }

  friend LogScaledComplex operator-(const LogScaledComplex& a, const LogScaledComplex& b) {
    return a + (-b);
  }

 private:
  void normalize() {
    if (is_zero()) {
      log_magnitude_ = 0.0;
      return;
    }
    const double mag = std::abs(mantissa_);
    const double k = std::floor(std::log(mag));
    if (k != 0.0) {
      mantissa_ /= std::exp(k);
      log_magnitude_ += k;
    }
    // log/exp rounding can leave |mantissa| a hair outside [1, e).
    const double m = std::abs(mantissa_);
    if (m >= std::numbers::e) {
      mantissa_ /= std::numbers::e;
      log_magnitude_ += 1.0;
    } else if (m < 1.0) {
      mantissa_ *= std::numbers::e;
      log_magnitude_ -= 1.0;
    }
  }

  std::complex<double> mantissa_{};
  double log_magnitude_ = 0.0;
};

/// |a - b| / max(|a|, |b|), evaluated without leaving log space.
inline double relative_difference(const LogScaledComplex& a, const LogScaledComplex& b) {
  if (a.is_zero() && b.is_zero()) return 0.0;
  if (a.is_zero() || b.is_zero()) return 1.0;
  const auto& big = a.log_abs() >= b.log_abs() ? a : b;
  // Exponent differences only, so large shared scales cost no precision.
  const auto za = a.mantissa() * std::exp(a.log_magnitude() - big.log_magnitude());
  const auto zb = b.mantissa() * std::exp(b.log_magnitude() - big.log_magnitude());
  return std::abs(za - zb) / std::abs(big.mantissa());
}

/// Unnormalized state exp(log_scale) * amplitudes, with unit-norm amplitudes.
template <class Real = double>
class LogScaledState {
 public:
  using real_type = Real;
  using value_type = std::complex<Real>;

  LogScaledState() = default;

  /// Normalizes `amplitudes`, folding the norm into log_scale.
  explicit LogScaledState(std::vector<value_type> amplitudes, Real log_scale = Real(0))
      : amplitudes_(std::move(amplitudes)), log_scale_(log_scale) {
    using std::isfinite;
    using std::log;
    using std::sqrt;
    if (amplitudes_.empty()) throw ValidationError("LogScaledState: empty amplitude vector");
    Real s(0);
    for (const auto& a : amplitudes_) s += std::norm(a);
    const Real n = sqrt(s);
    if (!(n > Real(0)) || !isfinite(n)) {
      throw NumericalError("LogScaledState: amplitudes have zero or non-finite norm");
    }
    for (auto& a : amplitudes_) a /= n;
    log_scale_ += log(n);
  }

  std::size_t dim() const noexcept { return amplitudes_.size(); }
  std::span<const value_type> amplitudes() const noexcept { return amplitudes_; }
  Real log_scale() const noexcept { return log_scale_; }

  LogScaledState with_log_scale(Real s) const {
    LogScaledState out = *this;
    out.log_scale_ = s;
    return out;
  }

  template <class Other>
  LogScaledState<Other> cast() const {
    std::vector<std::complex<Other>> a;
    a.reserve(dim());
    for (const auto& v : amplitudes_) {
      a.emplace_back(static_cast<Other>(v.real()), static_cast<Other>(v.imag()));
    }
    return LogScaledState<Other>(std::move(a), static_cast<Other>(log_scale_));
  }

 private:
  std::vector<value_type> amplitudes_;
  Real log_scale_ = Real(0);
};

}  // namespace itgap
