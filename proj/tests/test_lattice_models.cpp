#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "itgap/dense.hpp"
#include "itgap/ed_oracle.hpp"
#include "itgap/lattice_models.hpp"
#include "itgap/operator_algebra.hpp"
#include "test_support.hpp"

using namespace itgap;
using namespace itgap::testing;

namespace {

SpinChainSpec tfim_spec(int L, double J, double h) {
  SpinChainSpec s;
  s.sites = L;
  s.coupling = J;
  s.field = h;
  return s;
}

std::vector<double> eigenvalues(const SparseOperator<double>& h) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(to_dense(h));
  return {es.eigenvalues().data(), es.eigenvalues().data() + es.eigenvalues().size()};
}

// Full Fock-space Hubbard Hamiltonian written term by term from the Jordan-
// Wigner matrices; independent of the bit-level sector construction.
SparseOperator<double> hubbard_from_jw(const HubbardSpec& spec, ModeOrdering ordering) {
  const auto f = jordan_wigner_ops(spec.sites, ordering);
  const int L = spec.sites;
  const int bonds = spec.boundary == Boundary::periodic ? L : L - 1;
  SparseOperator<double> h(f.number.front().dim());
  for (Spin sp : {Spin::up, Spin::down}) {
    for (int l = 0; l < bonds; ++l) {
      const auto a = mode_index(l, sp, L, ordering), b = mode_index((l + 1) % L, sp, L, ordering);
      h = h - spec.hopping * (f.creation[a] * f.annihilation[b] - f.annihilation[a] * f.creation[b]);
    }
  }
  for (int l = 0; l < L; ++l) {
    h = h + spec.interaction * (f.number[mode_index(l, Spin::up, L, ordering)] *
                                f.number[mode_index(l, Spin::down, L, ordering)]);
  }
  return h.with_structure(Structure::hermitian);
}

}  // namespace

TEST(Tfim, TwoSiteClassicalDiagonal) {
  const auto h = tfim_hamiltonian(tfim_spec(2, 1.0, 0.0));
  Eigen::MatrixXcd expected = Eigen::MatrixXcd::Zero(4, 4);
  expected.diagonal() << -2, 2, 2, -2;
  EXPECT_EQ(max_abs_diff(to_dense(h), expected), 0.0);
}

TEST(Tfim, BenchmarkEnergySum) {
  const auto d = spectral_decomposition(tfim_hamiltonian(tfim_spec(4, 1.0, 1.0)));
  const auto g = exact_gaps(d);
  EXPECT_NEAR(*g.energy_sum, -10.05, 0.005);
  EXPECT_NEAR(*g.second_gap, 2.664, 0.0005);
}

TEST(Tfim, FreeSpinsInTransverseField) {
  const int L = 4;
  const double field = 0.7;
  std::vector<double> expected;
  for (int k = 0; k <= L; ++k) {
    for (std::uint64_t c = 0; c < binomial(L, k); ++c) expected.push_back(-field * (L - 2 * k));
  }
  std::sort(expected.begin(), expected.end());
  const auto got = eigenvalues(tfim_hamiltonian(tfim_spec(L, 0.0, field)));
  ASSERT_EQ(got.size(), expected.size());
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], expected[i], 1e-12);
}

TEST(Tfim, ObservableIsScaledMagnetization) {
  const auto o = tfim_observable(tfim_spec(2, 1.0, 1.0));
  Eigen::MatrixXcd expected = Eigen::MatrixXcd::Zero(4, 4);
  expected.diagonal() << -2, 0, 0, 2;
  EXPECT_EQ(max_abs_diff(to_dense(o), expected), 0.0);
  const auto big = tfim_observable(tfim_spec(5, 1.0, 1.0));
  for (std::size_t r = 0; r < big.dim(); ++r) {
    for (const auto& e : big.row(r)) EXPECT_EQ(e.col, r);
  }
}

TEST(Tfim, SymmetriesAndSupportPreconditions) {
  const auto spec = tfim_spec(4, 1.0, 1.0);
  const auto h = tfim_hamiltonian(spec), o = tfim_observable(spec);
  EXPECT_TRUE(h.is_hermitian(1e-12));
  EXPECT_LT(commutator(h, spin_flip_operator(4)).frobenius_norm(), 1e-12);
  EXPECT_GT(nested_commutator_recursive(h, o, 1).frobenius_norm(), 0.1);
  EXPECT_GT(nested_commutator_recursive(h, o, 3).frobenius_norm(), 0.1);
  const auto rep = support_check(spectral_decomposition(h), o, random_initial_state(h.dim(), 1), {1, 3});
  EXPECT_TRUE(rep.passed());
}

TEST(Tfim, DimensionCapAndValidation) {
  EXPECT_THROW(tfim_hamiltonian(tfim_spec(21, 1.0, 1.0)), ValidationError);
  EXPECT_THROW(tfim_hamiltonian(tfim_spec(1, 1.0, 1.0)), ValidationError);
  EXPECT_THROW(tfim_hamiltonian(tfim_spec(4, 1.0, 1.0), 8), ValidationError);
}

TEST(JordanWigner, CanonicalAnticommutation) {
  for (ModeOrdering ord : {ModeOrdering::species_major, ModeOrdering::interleaved}) {
    const auto f = jordan_wigner_ops(2, ord);
    const auto id = SparseOperator<double>::identity(16);
    for (std::size_t i = 0; i < 4; ++i) {
      for (std::size_t j = 0; j < 4; ++j) {
        const auto cc = f.annihilation[i] * f.annihilation[j] + f.annihilation[j] * f.annihilation[i];
        const auto cd = f.annihilation[i] * f.creation[j] + f.creation[j] * f.annihilation[i];
        EXPECT_TRUE(cc.is_zero());
        if (i == j) {
          EXPECT_EQ(max_abs_diff(cd, id), 0.0);
        } else {
          EXPECT_TRUE(cd.is_zero());
        }
      }
      EXPECT_EQ(max_abs_diff(f.number[i] * f.number[i], f.number[i]), 0.0);
    }
  }
}

TEST(JordanWigner, UnsupportedOrderingRejected) {
  EXPECT_THROW(parse_mode_ordering("snake"), ValidationError);
  EXPECT_EQ(parse_mode_ordering("interleaved"), ModeOrdering::interleaved);
  EXPECT_THROW(jordan_wigner_ops(0), ValidationError);
  EXPECT_THROW(jordan_wigner_ops(11), ValidationError);
}

TEST(Hubbard, SectorDimensionHalfFilling) {
  const auto spec = HubbardSpec::half_filling(4, 1.0, std::sqrt(2.0));
  const auto model = fermi_hubbard_hamiltonian(spec);
  EXPECT_EQ(model.basis.dim(), 36U);
  EXPECT_EQ(model.hamiltonian.dim(), 36U);
  for (auto s : model.basis.states()) {
    EXPECT_EQ(std::popcount(s & 0x0FU), 2);
    EXPECT_EQ(std::popcount(s & 0xF0U), 2);
  }
  EXPECT_THROW(HubbardSpec::half_filling(3, 1.0, 1.0), ValidationError);
}

TEST(Hubbard, SectorConstructionMatchesRestrictedJordanWigner) {
  for (Boundary bc : {Boundary::open, Boundary::periodic}) {
    for (ModeOrdering ord : {ModeOrdering::species_major, ModeOrdering::interleaved}) {
      for (int L : {2, 3, 4}) {
        HubbardSpec spec;
        spec.sites = L;
        spec.hopping = 0.8;
        spec.interaction = 1.7;
        spec.n_up = L / 2;
        spec.n_down = (L + 1) / 2;
        spec.boundary = bc;
        const auto model = fermi_hubbard_hamiltonian(spec, ord);
        const auto ref = restrict_to_sector(hubbard_from_jw(spec, ord), model.basis);
        EXPECT_LT(max_abs_diff(model.hamiltonian, ref), 1e-14) << "L=" << L;
      }
    }
  }
}

TEST(Hubbard, FullSpaceConservesSpeciesNumbers) {
  auto spec = HubbardSpec::half_filling(3 + 1, 1.0, std::sqrt(2.0));
  spec.boundary = Boundary::periodic;
  const auto h = hubbard_from_jw(spec, ModeOrdering::species_major);
  const auto f = jordan_wigner_ops(4);
  SparseOperator<double> n_up(h.dim()), n_down(h.dim());
  for (int l = 0; l < 4; ++l) {
    n_up = n_up + f.number[std::size_t(l)];
    n_down = n_down + f.number[std::size_t(4 + l)];
  }
  EXPECT_LT(commutator(h, n_up).frobenius_norm(), 1e-12);
  EXPECT_LT(commutator(h, n_down).frobenius_norm(), 1e-12);
  EXPECT_TRUE(h.is_hermitian(1e-12));
}

TEST(Hubbard, AtomicLimitCountsDoubleOccupancy) {
  auto spec = HubbardSpec::half_filling(4, 0.0, 1.3);
  const auto model = fermi_hubbard_hamiltonian(spec);
  for (std::size_t r = 0; r < model.hamiltonian.dim(); ++r) {
    int doubles = 0;
    for (int l = 0; l < 4; ++l) doubles += model.basis.occupied(r, l, Spin::up) && model.basis.occupied(r, l, Spin::down);
    EXPECT_NEAR(model.hamiltonian.entry(r, r).real(), 1.3 * doubles, 1e-15);
    for (const auto& e : model.hamiltonian.row(r)) EXPECT_EQ(e.col, r);
  }
}

TEST(Hubbard, BenchmarkSpectrumOpenChain) {
  const auto spec = HubbardSpec::half_filling(4, 1.0, std::sqrt(2.0));
  const auto g = exact_gaps(spectral_decomposition(fermi_hubbard_hamiltonian(spec).hamiltonian));
  EXPECT_NEAR(*g.energy_sum, -5.633, 0.0005);
  EXPECT_NEAR(*g.second_gap, 0.8363, 0.00005);
}

TEST(Hubbard, PeriodicWrapDoesNotMatchBenchmarkSpectrum) {
  auto spec = HubbardSpec::half_filling(4, 1.0, std::sqrt(2.0));
  spec.boundary = Boundary::periodic;
  const auto g = exact_gaps(spectral_decomposition(fermi_hubbard_hamiltonian(spec).hamiltonian));
  EXPECT_NEAR(*g.energy_sum, -6.1417, 0.0001);
}

TEST(Hubbard, ObservableDiagonalAndBounded) {
  for (HubbardObservable kind : {HubbardObservable::mode_density, HubbardObservable::site_density}) {
    auto spec = HubbardSpec::half_filling(4, 1.0, std::sqrt(2.0));
    spec.observable = kind;
    const auto model = fermi_hubbard_hamiltonian(spec);
    const auto o = fh_observable(spec, model.basis);
    double trace = 0.0, expected = 0.0;
    for (std::size_t r = 0; r < o.dim(); ++r) {
      for (const auto& e : o.row(r)) EXPECT_EQ(e.col, r);
      const double v = o.entry(r, r).real();
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 4.0);
      trace += v;
      if (kind == HubbardObservable::site_density) {
        for (int l : {0, 1}) expected += model.basis.occupied(r, l, Spin::up) + model.basis.occupied(r, l, Spin::down);
      } else {
        expected += model.basis.occupied(r, 0, Spin::up) + model.basis.occupied(r, 1, Spin::up);
      }
    }
    EXPECT_EQ(trace, expected);
    EXPECT_GT(nested_commutator_recursive(model.hamiltonian, o, 1).frobenius_norm(), 0.1);
  }
}

TEST(Hubbard, ObservableBasisMismatchThrows) {
  const auto spec = HubbardSpec::half_filling(4, 1.0, 1.0);
  const auto other = fermi_hubbard_hamiltonian(HubbardSpec::half_filling(2, 1.0, 1.0));
  EXPECT_THROW(fh_observable(spec, other.basis), ValidationError);
}

TEST(Hubbard, InvalidSpecsRejected) {
  HubbardSpec spec;
  spec.sites = 4;
  spec.n_up = 5;
  EXPECT_THROW(fermi_hubbard_hamiltonian(spec), ValidationError);
  spec.n_up = 2;
  spec.sites = 1;
  EXPECT_THROW(fermi_hubbard_hamiltonian(spec), ValidationError);
}

// The spin-summed density commutes with total S^2; on the open chain the
// ground state is a singlet and E1 a triplet, so their cross element is zero.
TEST(Hubbard, SupportCheckDependsOnObservable) {
  auto spec = HubbardSpec::half_filling(4, 1.0, std::sqrt(2.0));
  const auto model = fermi_hubbard_hamiltonian(spec);
  const auto d = spectral_decomposition(model.hamiltonian);
  const auto phi0 = random_initial_state(model.basis.dim(), 3);

  const auto ok = support_check(d, fh_observable(spec, model.basis), phi0, {1, 3});
  EXPECT_TRUE(ok.passed());

  spec.observable = HubbardObservable::site_density;
  const auto bad = support_check(d, fh_observable(spec, model.basis), phi0, {1, 3});
  EXPECT_FALSE(bad.cross_term_ok);
  EXPECT_LT(bad.cross_term, 1e-12);
}

TEST(RandomInitialState, NormalizedDeterministicNonnegative) {
  const auto a = random_initial_state(36, 42), b = random_initial_state(36, 42);
  const auto c = random_initial_state(36, 43);
  double norm = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) {
    norm += std::norm(a.amplitudes()[i]);
    EXPECT_EQ(a.amplitudes()[i], b.amplitudes()[i]);
    EXPECT_GE(a.amplitudes()[i].real(), 0.0);
    EXPECT_GE(a.amplitudes()[i].imag(), 0.0);
  }
  EXPECT_NEAR(norm, 1.0, 1e-14);
  EXPECT_NE(a.amplitudes()[0], c.amplitudes()[0]);
  EXPECT_EQ(a.log_scale(), 0.0);
  EXPECT_THROW(random_initial_state(0, 1), ValidationError);
}
