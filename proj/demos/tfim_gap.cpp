// Minimal end-to-end use of the library: spectral gap of a 6-site
// transverse-field Ising ring from the M = 1 commutator ratio.
#include <cstdio>

#include "itgap/itgap.hpp"

int main() {
  using namespace itgap;
  SpinChainSpec spec;
  spec.sites = 6;
  const auto h = tfim_hamiltonian(spec);
  const auto o = tfim_observable(spec);
  const auto phi0 = random_initial_state(h.dim(), 7);

  const auto traj = compute_trajectory(h, o, phi0, uniform_grid(0.0, 20.0, 201), {1}, Backend::exact);
  const FitWindow window(0.0, 20.0);
  const double tau = select_tau(traj, 1, window, TauSelection::min_slope);
  const auto gap = gap_from_ratio(traj, 1, tau);

  const auto exact = exact_gaps(spectral_decomposition(h));
  std::printf("tau = %.3f  gap = %.12f  exact = %.12f  eps = %.2e\n", tau, gap.value, *exact.delta_e,
              relative_error(*exact.delta_e, gap.value));
}
