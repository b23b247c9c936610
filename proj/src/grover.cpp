#include "mzg/grover.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mzg::grover {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

double wrap_2pi(double x) {
  double y = std::fmod(x, kTwoPi);
  if (y < 0.0) y += kTwoPi;
  return y;
}

using Mat2 = Eigen::Matrix2cd;
using Vec2 = Eigen::Vector2cd;

// 2D reduction in the (|S>, |N>) basis: psi0 = (sin t, cos t), oracle flips
// the sign of the |S> component, diffusion reflects about psi0 with phase phi.
Mat2 subspace_diffusion(double theta, double phi) {
  Vec2 psi0(std::sin(theta), std::cos(theta));
  const Complex w = 1.0 - std::exp(Complex(0.0, phi));
  return Mat2::Identity() - w * (psi0 * psi0.transpose());
}

Vec2 evolve_subspace(double theta, int iterations, double phi_a, double phi_b) {
  Vec2 v(std::sin(theta), std::cos(theta));
  const Mat2 da = subspace_diffusion(theta, phi_a);
  const Mat2 db = subspace_diffusion(theta, phi_b);
  for (int i = 0; i < iterations; ++i) {
    v[0] = -v[0];  // oracle, phase pi on |S>
    v = (i % 2 == 0 ? da : db) * v;
  }
  return v;
}

// Newton root-find on the complex unmarked amplitude c(phi_a, phi_b) = 0.
// Jacobian from analytic per-operator derivatives of the 2x2 product.
struct NewtonResult {
  bool converged = false;
  double phi_a = 0.0;
  double phi_b = 0.0;
  double residual = 1.0;
};

NewtonResult newton_refine(double theta, int iterations, double a0, double b0) {
  Vec2 psi0(std::sin(theta), std::cos(theta));
  const Mat2 proj = psi0 * psi0.transpose();

  double a = a0, b = b0;
  NewtonResult out;
  for (int it = 0; it < 80; ++it) {
    const Mat2 da = Mat2::Identity() - (1.0 - std::exp(Complex(0, a))) * proj;
    const Mat2 db = Mat2::Identity() - (1.0 - std::exp(Complex(0, b))) * proj;
    const Mat2 dda = Complex(0, 1) * std::exp(Complex(0, a)) * proj;
    const Mat2 ddb = Complex(0, 1) * std::exp(Complex(0, b)) * proj;

    Vec2 v(std::sin(theta), std::cos(theta));
    Vec2 ga = Vec2::Zero();  // d v / d phi_a
    Vec2 gb = Vec2::Zero();
    for (int i = 0; i < iterations; ++i) {
      v[0] = -v[0];
      ga[0] = -ga[0];
      gb[0] = -gb[0];
      const bool use_a = (i % 2 == 0);
      const Mat2& d = use_a ? da : db;
      const Mat2& dd = use_a ? dda : ddb;
      const Vec2 nv = d * v;
      ga = d * ga + (use_a ? Vec2(dd * v) : Vec2(Vec2::Zero()));
      gb = d * gb + (use_a ? Vec2(Vec2::Zero()) : Vec2(dd * v));
      v = nv;
    }
    const Complex c = v[1];
    const double r = std::norm(c);
    if (r < 1e-24) {
      out.converged = true;
      out.phi_a = wrap_2pi(a);
      out.phi_b = wrap_2pi(b);
      out.residual = r;
      return out;
    }

    Eigen::Matrix2d jac;
    jac << ga[1].real(), gb[1].real(), ga[1].imag(), gb[1].imag();
    Eigen::Vector2d f(c.real(), c.imag());
    double step_a, step_b;
    if (iterations == 1) {
      // single phase in play: least-squares step on phi_a only
      const Eigen::Vector2d j = jac.col(0);
      const double denom = j.squaredNorm();
      if (denom < 1e-30) break;
      step_a = -j.dot(f) / denom;
      step_b = step_a;
      b = a;
    } else {
      if (std::abs(jac.determinant()) < 1e-30) break;
      const Eigen::Vector2d d = jac.partialPivLu().solve(-f);
      step_a = d[0];
      step_b = d[1];
    }
    // damping: halve until the residual decreases
    double scale = 1.0;
    bool moved = false;
    for (int h = 0; h < 30; ++h) {
      const double na = a + scale * step_a;
      const double nb = (iterations == 1) ? na : b + scale * step_b;
      const Vec2 t = evolve_subspace(theta, iterations, na, nb);
      if (std::norm(t[1]) < r) {
        a = na;
        b = nb;
        moved = true;
        break;
      }
      scale *= 0.5;
    }
    if (!moved) break;
  }
  const Vec2 t = evolve_subspace(theta, iterations, a, b);
  out.converged = std::norm(t[1]) < 1e-18;
  out.phi_a = wrap_2pi(a);
  out.phi_b = wrap_2pi(b);
  out.residual = std::norm(t[1]);
  return out;
}

std::vector<double> phases_for(const Schedule& s) {
  return s.diffusion_phases;
}

}  // namespace

double GroverSpec::theta() const {
  return std::asin(std::sqrt(static_cast<double>(marked.size()) / database_size));
}

void GroverSpec::validate() const {
  if (database_size < 2) {
    throw std::invalid_argument("GroverSpec: database size must be >= 2");
  }
  if (marked.empty() || static_cast<int>(marked.size()) >= database_size) {
    throw std::invalid_argument("GroverSpec: need 1 <= M < N");
  }
  for (int m : marked) {
    if (m < 0 || m >= database_size) {
      throw std::invalid_argument("GroverSpec: marked index out of range");
    }
  }
  if (variant == Variant::kDeterministic &&
      database_size < 4 * static_cast<int>(marked.size())) {
    throw std::invalid_argument("GroverSpec: deterministic variant requires N/M >= 4");
  }
}

ComplexMatrix uniform_prep(int n) {
  if (n < 2) {
    throw std::invalid_argument("uniform_prep: n must be >= 2");
  }
  Eigen::VectorXd w = Eigen::VectorXd::Constant(n, 1.0 / std::sqrt(static_cast<double>(n)));
  w[0] -= 1.0;
  const double nw = w.squaredNorm();
  Eigen::MatrixXd h = Eigen::MatrixXd::Identity(n, n) - (2.0 / nw) * (w * w.transpose());
  return h.cast<Complex>();
}

ComplexMatrix oracle(int n, const std::set<int>& marked, double phase) {
  if (marked.empty()) {
    throw std::invalid_argument("oracle: marked set must be nonempty");
  }
  ComplexMatrix m = ComplexMatrix::Identity(n, n);
  const Complex f = std::exp(Complex(0.0, phase));
  for (int idx : marked) {
    if (idx < 0 || idx >= n) {
      throw std::invalid_argument("oracle: marked index out of range");
    }
    m(idx, idx) = f;
  }
  return m;
}

ComplexMatrix diffusion(int n, double phase) {
  if (n < 2) {
    throw std::invalid_argument("diffusion: n must be >= 2");
  }
  ModeState psi0 = ModeState::Constant(n, Complex(1.0 / std::sqrt(static_cast<double>(n)), 0.0));
  const Complex w = 1.0 - std::exp(Complex(0.0, phase));
  return ComplexMatrix::Identity(n, n) - w * (psi0 * psi0.adjoint());
}

int optimal_iterations(const GroverSpec& spec) {
  spec.validate();
  return static_cast<int>(std::floor(kPi / (4.0 * spec.theta())));
}

double original_success_probability(const GroverSpec& spec) {
  const int k = optimal_iterations(spec);
  const double s = std::sin((2.0 * k + 1.0) * spec.theta());
  return s * s;
}

Schedule original_schedule(const GroverSpec& spec) {
  Schedule s;
  s.iteration_count = optimal_iterations(spec);
  s.diffusion_phases.assign(static_cast<std::size_t>(s.iteration_count), kPi);
  s.phi_a = kPi;
  s.phi_b = kPi;
  s.residual = 1.0 - original_success_probability(spec);
  return s;
}

namespace detail {

std::pair<Complex, Complex> subspace_amplitudes(double theta, int iterations,
                                                double phi_a, double phi_b) {
  const Vec2 v = evolve_subspace(theta, iterations, phi_a, phi_b);
  return {v[0], v[1]};
}

std::vector<GridCandidate> scan_phase_grid_serial(double theta, int iterations,
                                                  int resolution, double cutoff) {
  std::vector<GridCandidate> hits;
  const double step = kTwoPi / resolution;
  for (int ia = 0; ia < resolution; ++ia) {
    const double a = ia * step;
    for (int ib = 0; ib < (iterations > 1 ? resolution : 1); ++ib) {
      const double b = (iterations > 1) ? ib * step : a;
      const Vec2 v = evolve_subspace(theta, iterations, a, b);
      const double r = std::norm(v[1]);
      if (r < cutoff) {
        hits.push_back({a, b, r});
      }
    }
  }
  return hits;
}

std::vector<GridCandidate> scan_phase_grid(double theta, int iterations,
                                           int resolution, double cutoff) {
  std::vector<std::vector<GridCandidate>> rows(static_cast<std::size_t>(resolution));
  const double step = kTwoPi / resolution;
#pragma omp parallel for schedule(static)
  for (int ia = 0; ia < resolution; ++ia) {
    const double a = ia * step;
    auto& row = rows[static_cast<std::size_t>(ia)];
    for (int ib = 0; ib < (iterations > 1 ? resolution : 1); ++ib) {
      const double b = (iterations > 1) ? ib * step : a;
      const Vec2 v = evolve_subspace(theta, iterations, a, b);
      const double r = std::norm(v[1]);
      if (r < cutoff) {
        row.push_back({a, b, r});
      }
    }
  }
  std::vector<GridCandidate> hits;
  for (const auto& row : rows) {
    hits.insert(hits.end(), row.begin(), row.end());
  }
  return hits;
}

}  // namespace detail

Schedule deterministic_phase_solve(const GroverSpec& spec) {
  spec.validate();
  if (spec.variant != Variant::kDeterministic) {
    throw std::invalid_argument("deterministic_phase_solve: variant must be deterministic");
  }
  const double theta = spec.theta();
  const int kappa = optimal_iterations(spec);

  constexpr int kResolution = 360;
  constexpr double kCutoff = 5e-3;

  double best_score = std::numeric_limits<double>::infinity();
  NewtonResult best;
  int best_k = 0;
  for (int k : {kappa, kappa + 1}) {
    if (k < 1) continue;
    const auto hits = detail::scan_phase_grid(theta, k, kResolution, kCutoff);
    for (const auto& h : hits) {
      const NewtonResult r = newton_refine(theta, k, h.phi_a, h.phi_b);
      if (!r.converged) continue;
      const double score = std::abs(r.phi_a - kPi) + std::abs(r.phi_b - kPi);
      if (score < best_score - 1e-9) {
        best_score = score;
        best = r;
        best_k = k;
      }
    }
    if (best_k == k && best.converged) break;  // kappa works; do not try kappa+1
  }
  if (!std::isfinite(best_score) || !best.converged) {
    throw std::runtime_error(
        "deterministic_phase_solve: solver did not converge; best residual " +
        std::to_string(best.residual));
  }

  Schedule s;
  s.iteration_count = best_k;
  s.phi_a = best.phi_a;
  s.phi_b = best.phi_b;
  s.residual = best.residual;
  s.diffusion_phases.resize(static_cast<std::size_t>(best_k));
  for (int i = 0; i < best_k; ++i) {
    s.diffusion_phases[static_cast<std::size_t>(i)] = (i % 2 == 0) ? best.phi_a : best.phi_b;
  }
  if (best_k == 1) {
    s.phi_b = s.phi_a;
  }
  return s;
}

ComplexMatrix grover_unitary(const GroverSpec& spec, const Schedule& schedule) {
  spec.validate();
  const int n = spec.database_size;
  ComplexMatrix u = uniform_prep(n);
  const ComplexMatrix o = oracle(n, spec.marked, schedule.oracle_phase);
  for (double phi : phases_for(schedule)) {
    u = diffusion(n, phi) * (o * u);
  }
  return u;
}

BlochTrajectory bloch_trajectory(const GroverSpec& spec, const Schedule& schedule) {
  spec.validate();
  const int n = spec.database_size;
  const double m = static_cast<double>(spec.marked.size());

  ModeState s_axis = ModeState::Zero(n);
  ModeState n_axis = ModeState::Zero(n);
  for (int i = 0; i < n; ++i) {
    if (spec.marked.count(i)) {
      s_axis[i] = Complex(1.0 / std::sqrt(m), 0.0);
    } else {
      n_axis[i] = Complex(1.0 / std::sqrt(n - m), 0.0);
    }
  }

  ModeState psi = uniform_prep(n).col(0);
  const ComplexMatrix o = oracle(n, spec.marked, schedule.oracle_phase);

  BlochTrajectory traj;
  double prev_polar = 0.0;

  auto project = [&](const ModeState& v, const std::string& label, bool oracle_step) {
    const Complex a_s = s_axis.dot(v);  // Eigen dot conjugates the left side
    const Complex a_n = n_axis.dot(v);
    const ModeState residual = v - a_s * s_axis - a_n * n_axis;
    if (residual.norm() > 1e-10) {
      throw std::runtime_error("bloch_trajectory: state left the 2D invariant subspace");
    }
    const double folded = std::atan2(std::abs(a_s), std::abs(a_n));
    double polar, azimuth;
    if (traj.points.empty()) {
      polar = folded;
      azimuth = 0.0;
    } else if (oracle_step) {
      polar = prev_polar;
      azimuth = wrap_2pi(traj.points.back().azimuth + schedule.oracle_phase);
    } else {
      // present the meridian-unfolded point whose azimuth lies in (-pi/2, pi/2]
      double az = std::arg(a_s * std::conj(a_n));
      polar = folded;
      if (az > kPi / 2.0 + 1e-12 || az <= -kPi / 2.0 + 1e-12) {
        polar = kPi - folded;
        az += (az > 0.0) ? -kPi : kPi;
      }
      azimuth = az;
    }
    prev_polar = polar;
    traj.points.push_back({label, polar, azimuth});
  };

  project(psi, "init", false);
  for (double phi : phases_for(schedule)) {
    psi = o * psi;
    project(psi, "oracle", true);
    psi = diffusion(n, phi) * psi;
    project(psi, "diffusion", false);
  }
  return traj;
}

}  // namespace mzg::grover
