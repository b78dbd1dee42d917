#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "itgap/error.hpp"
#include "itgap/log_scaled.hpp"
#include "itgap/operator_algebra.hpp"
#include "itgap/sparse_operator.hpp"

// Conventions: site 0 is the least significant bit of a basis index and
// Z|0> = +|0>. Fermion modes map to bits through a ModeOrdering; the default
// places all spin-up modes (sites 0..L-1) before all spin-down modes.

namespace itgap {

inline constexpr std::size_t kDefaultDimensionCap = std::size_t{1} << 20;

enum class Boundary { periodic, open };

struct SpinChainSpec {
  int sites = 4;
  double coupling = 1.0;  // J
  double field = 1.0;     // h
  Boundary boundary = Boundary::periodic;

  void validate() const {
    if (sites < 2) throw ValidationError("SpinChainSpec: L must be >= 2");
    if (boundary != Boundary::periodic) {
      throw ValidationError("SpinChainSpec: only periodic boundaries are supported");
    }
  }
};

enum class Spin { up = 0, down = 1 };

enum class ModeOrdering {
  species_major,  // up_0 .. up_{L-1}, down_0 .. down_{L-1}
  interleaved,    // up_0, down_0, up_1, down_1, ...
};

inline ModeOrdering parse_mode_ordering(std::string_view s) {
  if (s == "species_major") return ModeOrdering::species_major;
  if (s == "interleaved") return ModeOrdering::interleaved;
  throw ValidationError("unsupported mode ordering '" + std::string(s) + "'");
}

inline std::size_t mode_index(int site, Spin spin, int sites, ModeOrdering ordering) {
  const auto s = static_cast<std::size_t>(spin);
  switch (ordering) {
    case ModeOrdering::species_major:
      return s * static_cast<std::size_t>(sites) + static_cast<std::size_t>(site);
    case ModeOrdering::interleaved:
      return 2 * static_cast<std::size_t>(site) + s;
  }
  throw ValidationError("unsupported mode ordering");
}

/// Which density the Fermi-Hubbard coordinating observable sums.
enum class HubbardObservable {
  mode_density,  // n on Jordan-Wigner modes 0 and 1 (= n_{0,up} + n_{1,up})
  site_density,  // n_0 + n_1 with n_l = n_{l,up} + n_{l,down}
};

struct HubbardSpec {
  int sites = 4;
  double hopping = 1.0;      // t
  double interaction = 1.0;  // U
  int n_up = 2;
  int n_down = 2;
  Boundary boundary = Boundary::open;
  HubbardObservable observable = HubbardObservable::mode_density;

  static HubbardSpec half_filling(int sites, double t, double u) {
    if (sites % 2 != 0) throw ValidationError("HubbardSpec: half filling requires even L");
    HubbardSpec s;
    s.sites = sites;
    s.hopping = t;
    s.interaction = u;
    s.n_up = s.n_down = sites / 2;
    return s;
  }

  void validate() const {
    if (sites < 2) throw ValidationError("HubbardSpec: L must be >= 2");
    if (sites > 31) throw ValidationError("HubbardSpec: L must be <= 31");
    if (n_up < 0 || n_up > sites || n_down < 0 || n_down > sites) {
      throw ValidationError("HubbardSpec: particle numbers must lie in [0, L]");
    }
  }
};

/// Occupation bitstrings of one (n_up, n_down) sector, ascending.
class SectorBasis {
 public:
  SectorBasis(int sites, int n_up, int n_down, ModeOrdering ordering)
      : sites_(sites), n_up_(n_up), n_down_(n_down), ordering_(ordering) {
    std::uint64_t up_mask = 0;
    for (int l = 0; l < sites; ++l) up_mask |= std::uint64_t{1} << mode_index(l, Spin::up, sites, ordering);
    const std::uint64_t total = std::uint64_t{1} << (2 * sites);
    for (std::uint64_t s = 0; s < total; ++s) {
      if (std::popcount(s & up_mask) == n_up && std::popcount(s & ~up_mask) == n_down) {
        states_.push_back(s);
      }
    }
    if (states_.empty()) throw ValidationError("SectorBasis: empty particle-number sector");
  }

  std::size_t dim() const noexcept { return states_.size(); }
  int sites() const noexcept { return sites_; }
  int n_up() const noexcept { return n_up_; }
  int n_down() const noexcept { return n_down_; }
  ModeOrdering ordering() const noexcept { return ordering_; }
  const std::vector<std::uint64_t>& states() const noexcept { return states_; }

  std::optional<std::size_t> index_of(std::uint64_t bits) const {
    auto it = std::lower_bound(states_.begin(), states_.end(), bits);
    if (it == states_.end() || *it != bits) return std::nullopt;
    return static_cast<std::size_t>(it - states_.begin());
  }

  bool occupied(std::size_t index, int site, Spin spin) const {
    return (states_[index] >> mode_index(site, spin, sites_, ordering_)) & 1U;
  }

 private:
  int sites_;
  int n_up_;
  int n_down_;
  ModeOrdering ordering_;
  std::vector<std::uint64_t> states_;
};

/// One ladder operator: c_mode, or c_mode^dagger when `create`.
struct Ladder {
  std::size_t mode;
  bool create;
};

/// Applies a product of ladder operators (rightmost acts first) to a basis
/// bitstring. Returns the sign and new bitstring, or nullopt for zero.
inline std::optional<std::pair<int, std::uint64_t>> apply_ladders(std::uint64_t bits,
                                                                  std::span<const Ladder> product) {
  int sign = 1;
  for (auto it = product.rbegin(); it != product.rend(); ++it) {
    const std::uint64_t bit = std::uint64_t{1} << it->mode;
    const bool occ = bits & bit;
    if (occ == it->create) return std::nullopt;
    if (std::popcount(bits & (bit - 1)) % 2 == 1) sign = -sign;
    bits ^= bit;
  }
  return std::make_pair(sign, bits);
}

/// c, c^dagger and n for every mode, on the full 4^L Fock space.
struct FermionOperators {
  std::vector<SparseOperator<double>> annihilation;
  std::vector<SparseOperator<double>> creation;
  std::vector<SparseOperator<double>> number;
  ModeOrdering ordering;
};

inline FermionOperators jordan_wigner_ops(int sites, ModeOrdering ordering = ModeOrdering::species_major,
                                          std::size_t dim_cap = kDefaultDimensionCap) {
  if (sites < 1) throw ValidationError("jordan_wigner_ops: L must be >= 1");
  if (ordering != ModeOrdering::species_major && ordering != ModeOrdering::interleaved) {
    throw ValidationError("jordan_wigner_ops: unsupported mode ordering");
  }
  const std::size_t modes = 2 * static_cast<std::size_t>(sites);
  if (modes >= 63 || (std::size_t{1} << modes) > dim_cap) {
    throw ValidationError("jordan_wigner_ops: Fock space exceeds dimension cap");
  }
  const std::size_t dim = std::size_t{1} << modes;
  FermionOperators ops{{}, {}, {}, ordering};
  for (std::size_t j = 0; j < modes; ++j) {
    std::vector<Triplet<double>> t;
    const Ladder c{j, false};
    for (std::uint64_t s = 0; s < dim; ++s) {
      if (auto r = apply_ladders(s, std::span(&c, 1))) t.push_back({r->second, s, double(r->first)});
    }
    auto a = SparseOperator<double>::from_triplets(dim, std::move(t));
    auto n = (a.adjoint() * a).with_structure(Structure::hermitian);
    ops.creation.push_back(a.adjoint());
    ops.annihilation.push_back(std::move(a));
    ops.number.push_back(std::move(n));
  }
  return ops;
}

/// P^dagger op P for the sector's embedding P into the full Fock space.
inline SparseOperator<double> restrict_to_sector(const SparseOperator<double>& op,
                                                 const SectorBasis& basis) {
  std::vector<Triplet<double>> t;
  for (std::size_t i = 0; i < basis.dim(); ++i) {
    for (const auto& e : op.row(basis.states()[i])) {
      if (auto j = basis.index_of(e.col)) t.push_back({i, *j, e.value});
    }
  }
  auto out = SparseOperator<double>::from_triplets(basis.dim(), std::move(t));
  return op.structure() == Structure::general ? out : out.with_structure(op.structure());
}

namespace detail {

inline std::size_t spin_dim(int sites, std::size_t dim_cap, const char* what) {
  if (sites >= 63 || (std::size_t{1} << sites) > dim_cap) {
    throw ValidationError(std::string(what) + ": 2^L exceeds dimension cap");
  }
  return std::size_t{1} << sites;
}

inline double z_eigenvalue(std::size_t bits, int site) { return ((bits >> site) & 1U) ? -1.0 : 1.0; }

}  // namespace detail

/// -J sum_l Z_l Z_{l+1} - h sum_l X_l with Z_L = Z_0.
inline SparseOperator<double> tfim_hamiltonian(const SpinChainSpec& spec,
                                               std::size_t dim_cap = kDefaultDimensionCap) {
  spec.validate();
  const int L = spec.sites;
  const std::size_t dim = detail::spin_dim(L, dim_cap, "tfim_hamiltonian");
  std::vector<Triplet<double>> t;
  t.reserve(dim * (L + 1));
  for (std::size_t s = 0; s < dim; ++s) {
    double diag = 0.0;
    for (int l = 0; l < L; ++l) {
      diag -= spec.coupling * detail::z_eigenvalue(s, l) * detail::z_eigenvalue(s, (l + 1) % L);
    }
    t.push_back({s, s, diag});
    for (int l = 0; l < L; ++l) t.push_back({s ^ (std::size_t{1} << l), s, -spec.field});
  }
  return SparseOperator<double>::from_triplets(dim, std::move(t)).with_structure(Structure::hermitian);
}

/// -J (Z_0 + Z_1).
inline SparseOperator<double> tfim_observable(const SpinChainSpec& spec,
                                              std::size_t dim_cap = kDefaultDimensionCap) {
  spec.validate();
  const std::size_t dim = detail::spin_dim(spec.sites, dim_cap, "tfim_observable");
  std::vector<std::complex<double>> diag(dim);
  for (std::size_t s = 0; s < dim; ++s) {
    diag[s] = -spec.coupling * (detail::z_eigenvalue(s, 0) + detail::z_eigenvalue(s, 1));
  }
  return SparseOperator<double>::diagonal(diag).with_structure(Structure::hermitian);
}

/// prod_l X_l, the global spin flip.
inline SparseOperator<double> spin_flip_operator(int sites, std::size_t dim_cap = kDefaultDimensionCap) {
  const std::size_t dim = detail::spin_dim(sites, dim_cap, "spin_flip_operator");
  std::vector<Triplet<double>> t;
  for (std::size_t s = 0; s < dim; ++s) t.push_back({s ^ (dim - 1), s, 1.0});
  return SparseOperator<double>::from_triplets(dim, std::move(t)).with_structure(Structure::hermitian);
}

struct HubbardModel {
  SparseOperator<double> hamiltonian;
  SectorBasis basis;
};

/// -t sum (c+_l c_{l+1} - c_l c+_{l+1}) + U sum n_{l,up} n_{l,down}, built
/// directly in the (n_up, n_down) sector.
inline HubbardModel fermi_hubbard_hamiltonian(const HubbardSpec& spec,
                                              ModeOrdering ordering = ModeOrdering::species_major,
                                              std::size_t dim_cap = kDefaultDimensionCap) {
  spec.validate();
  const int L = spec.sites;
  if (binomial(L, spec.n_up) * binomial(L, spec.n_down) > dim_cap) {
    throw ValidationError("fermi_hubbard_hamiltonian: sector exceeds dimension cap");
  }
  SectorBasis basis(L, spec.n_up, spec.n_down, ordering);
  const int bonds = spec.boundary == Boundary::periodic ? L : L - 1;

  std::vector<Triplet<double>> t;
  for (std::size_t col = 0; col < basis.dim(); ++col) {
    const std::uint64_t s = basis.states()[col];
    for (Spin sp : {Spin::up, Spin::down}) {
      for (int l = 0; l < bonds; ++l) {
        const std::size_t a = mode_index(l, sp, L, ordering);
        const std::size_t b = mode_index((l + 1) % L, sp, L, ordering);
        const Ladder forward[] = {{a, true}, {b, false}};   // c+_a c_b
        const Ladder backward[] = {{a, false}, {b, true}};  // c_a c+_b
        if (auto r = apply_ladders(s, forward)) {
          t.push_back({*basis.index_of(r->second), col, -spec.hopping * r->first});
        }
        if (auto r = apply_ladders(s, backward)) {
          t.push_back({*basis.index_of(r->second), col, spec.hopping * r->first});
        }
      }
    }
    double doubles = 0.0;
    for (int l = 0; l < L; ++l) {
      if (basis.occupied(col, l, Spin::up) && basis.occupied(col, l, Spin::down)) doubles += 1.0;
    }
    t.push_back({col, col, spec.interaction * doubles});
  }
  auto h = SparseOperator<double>::from_triplets(basis.dim(), std::move(t));
  return {h.with_structure(Structure::hermitian), std::move(basis)};
}

/// Coordinating observable for the Hubbard chain; see HubbardObservable.
inline SparseOperator<double> fh_observable(const HubbardSpec& spec, const SectorBasis& basis) {
  if (basis.sites() != spec.sites || basis.n_up() != spec.n_up || basis.n_down() != spec.n_down) {
    throw ValidationError("fh_observable: basis does not match spec");
  }
  std::vector<std::complex<double>> diag(basis.dim());
  for (std::size_t i = 0; i < basis.dim(); ++i) {
    const std::uint64_t s = basis.states()[i];
    double n = 0.0;
    if (spec.observable == HubbardObservable::mode_density) {
      n = double((s & 1U) + ((s >> 1) & 1U));
    } else {
      for (int l : {0, 1}) {
        n += basis.occupied(i, l, Spin::up) + basis.occupied(i, l, Spin::down);
      }
    }
    diag[i] = n;
  }
  return SparseOperator<double>::diagonal(diag).with_structure(Structure::hermitian);
}

/// Total particle number of one spin species on the sector.
inline SparseOperator<double> species_number(const SectorBasis& basis, Spin spin) {
  std::vector<std::complex<double>> diag(basis.dim());
  for (std::size_t i = 0; i < basis.dim(); ++i) {
    double n = 0.0;
    for (int l = 0; l < basis.sites(); ++l) n += basis.occupied(i, l, spin);
    diag[i] = n;
  }
  return SparseOperator<double>::diagonal(diag).with_structure(Structure::hermitian);
}

/// Uniform double in [0, 1) from the top 53 bits, independent of the
/// standard library's distribution implementation.
inline double uniform_unit(std::mt19937_64& rng) { return double(rng() >> 11) * 0x1.0p-53; }

/// Re and Im of each amplitude drawn uniformly from [0, 1), then normalized.
inline LogScaledState<double> random_initial_state(std::size_t dim, std::uint64_t seed) {
  if (dim == 0) throw ValidationError("random_initial_state: dim must be >= 1");
  std::mt19937_64 rng(seed);
  std::vector<std::complex<double>> a(dim);
  for (auto& v : a) {
    const double re = uniform_unit(rng);
    const double im = uniform_unit(rng);
    v = {re, im};
  }
  return LogScaledState<double>(std::move(a)).with_log_scale(0.0);
}

}  // namespace itgap
