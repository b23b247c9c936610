#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "mzg/core.hpp"

namespace mzg::grover {

enum class Variant { kOriginal, kDeterministic };

/// Search instance: database size N, marked set, algorithm variant.
struct GroverSpec {
  int database_size = 0;
  std::set<int> marked;
  Variant variant = Variant::kOriginal;

  /// theta = asin(sqrt(M/N)); the per-iteration half-rotation of Fig-1 geometry.
  double theta() const;
  void validate() const;  // throws std::invalid_argument on violations
};

/// Iteration plan: phase of the oracle (pi for the restricted oracle) and the
/// per-iteration diffusion phases.  The deterministic variant alternates two
/// values phi_a, phi_b; the original uses pi throughout.
struct Schedule {
  int iteration_count = 0;
  std::vector<double> diffusion_phases;
  double oracle_phase = 3.14159265358979323846;
  double phi_a = 3.14159265358979323846;
  double phi_b = 3.14159265358979323846;
  double residual = 0.0;  // 1 - success achieved by the solver
};

/// Exported path of the state in the span{|S>,|N>} subspace.
///
/// Convention: polar is the in-plane angle from the |N> axis, so the uniform
/// start sits at theta and |S> at pi/2; unfolding past pi/2 keeps the original
/// variant's per-iteration advance equal to 2*theta.  Oracle steps hold polar
/// fixed and add the oracle phase to the azimuth; diffusion steps are
/// presented with azimuth in (-pi/2, pi/2].
struct BlochPoint {
  std::string label;  // "init", "oracle", "diffusion"
  double polar = 0.0;
  double azimuth = 0.0;
};

struct BlochTrajectory {
  std::vector<BlochPoint> points;
};

/// Unitary mapping basis state 0 to the uniform superposition over n modes
/// (real Householder reflection).
ComplexMatrix uniform_prep(int n);

/// Diagonal oracle: e^{i phase} on marked entries, 1 elsewhere.
/// Throws on an empty marked set or out-of-range indices.
ComplexMatrix oracle(int n, const std::set<int>& marked, double phase);

/// Generalized diffusion D(phi) = I - (1 - e^{i phi}) |psi0><psi0|.
ComplexMatrix diffusion(int n, double phase);

/// kappa = floor(pi / (4 asin(sqrt(M/N)))).
int optimal_iterations(const GroverSpec& spec);

/// Closed form sin^2((2 kappa + 1) theta) for the original schedule.
double original_success_probability(const GroverSpec& spec);

/// Schedule for the original variant: kappa iterations, all phases pi.
Schedule original_schedule(const GroverSpec& spec);

/// Numerically solved alternating-phase schedule reaching success
/// >= 1 - 1e-9 in k <= kappa+1 iterations.  Requires N/M >= 4.
Schedule deterministic_phase_solve(const GroverSpec& spec);

/// prep followed by k iterations of [diffusion(phi_i) * oracle].
ComplexMatrix grover_unitary(const GroverSpec& spec, const Schedule& schedule);

/// Per-step subspace angles; throws if the state leaves the 2D subspace
/// beyond 1e-10.
BlochTrajectory bloch_trajectory(const GroverSpec& spec, const Schedule& schedule);

namespace detail {

/// One grid cell of the alternating-phase scan.
struct GridCandidate {
  double phi_a = 0.0;
  double phi_b = 0.0;
  double residual = 1.0;
};

/// Scan a resolution x resolution grid over [0, 2pi)^2 and return every cell
/// with residual below the cutoff.  OpenMP-parallel over rows; output order
/// is row-major regardless of thread count.
std::vector<GridCandidate> scan_phase_grid(double theta, int iterations,
                                           int resolution, double cutoff);

/// Single-thread reference for scan_phase_grid; must match it bit-exactly.
std::vector<GridCandidate> scan_phase_grid_serial(double theta, int iterations,
                                                  int resolution, double cutoff);

/// Final (S, N) amplitudes of the 2D-reduced schedule.
std::pair<Complex, Complex> subspace_amplitudes(double theta, int iterations,
                                                double phi_a, double phi_b);

}  // namespace detail

}  // namespace mzg::grover
