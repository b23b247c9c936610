#include "mzg/calib.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "mzg/rng.hpp"

namespace mzg::calib {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

double wrap_2pi(double x) {
  double y = std::fmod(x, kTwoPi);
  if (y < 0.0) y += kTwoPi;
  return y;
}

double get_heater_phase(const mesh::MeshProgram& p, int heater) {
  const auto& cell = p.cells.at(static_cast<std::size_t>(heater / 2));
  return heater % 2 == 0 ? cell.theta : cell.phi;
}

void set_heater_phase(mesh::MeshProgram& p, int heater, double value) {
  auto& cell = p.cells.at(static_cast<std::size_t>(heater / 2));
  (heater % 2 == 0 ? cell.theta : cell.phi) = wrap_2pi(value);
}

}  // namespace

double tvd(const Distribution& p, const Distribution& q) {
  if (p.size() != q.size()) {
    throw std::invalid_argument("tvd: length mismatch");
  }
  auto check_norm = [](const Distribution& d, const char* name) {
    const double s = std::accumulate(d.probabilities.begin(), d.probabilities.end(), 0.0);
    if (std::abs(s - 1.0) > 1e-9) {
      throw std::invalid_argument(std::string("tvd: ") + name + " is not normalized");
    }
  };
  check_norm(p, "first argument");
  check_norm(q, "second argument");
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    acc += std::abs(p.probabilities[i] - q.probabilities[i]);
  }
  return 0.5 * acc;
}

std::vector<int> engaged_heaters(const mesh::MeshProgram& program, int n) {
  std::vector<int> ids;
  for (int j = 0; j < program.cell_count(); ++j) {
    const auto& cell = program.cells[static_cast<std::size_t>(j)];
    if (cell.column < n && cell.top_mode + 1 < n) {
      ids.push_back(2 * j);
      ids.push_back(2 * j + 1);
    }
  }
  return ids;
}

double shot_noise_floor(const Distribution& target, std::int64_t shots) {
  if (shots <= 0) {
    return 0.0;
  }
  double acc = 0.0;
  for (double p : target.probabilities) {
    acc += std::sqrt(p * (1.0 - p) / static_cast<double>(shots));
  }
  return 0.5 * std::sqrt(2.0 / kPi) * acc;
}

std::pair<mesh::MeshProgram, OptimisationTrace> sequential_optimise(
    const Evaluator& evaluate, const mesh::MeshProgram& program, const Distribution& target,
    std::span<const int> heaters, const SequentialOptions& options) {
  if (options.step <= 0.0) {
    throw std::invalid_argument("sequential_optimise: step must be positive");
  }
  mesh::MeshProgram current = program;
  OptimisationTrace trace;
  double current_tvd = tvd(evaluate(current), target);

  std::vector<int> order(heaters.begin(), heaters.end());
  Rng shuffle_rng(options.shuffle_seed);

  for (int pass = 0; pass < options.passes; ++pass) {
    if (options.shuffle) {
      for (std::size_t i = order.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(shuffle_rng.next_u64() % i);
        std::swap(order[i - 1], order[j]);
      }
    }
    for (int heater : order) {
      double step = options.step;
      int shrinks = 0;
      double direction = 1.0;
      while (true) {
        const double old_phase = get_heater_phase(current, heater);
        mesh::MeshProgram candidate = current;
        set_heater_phase(candidate, heater, old_phase + direction * step);
        const double cand_tvd = tvd(evaluate(candidate), target);
        if (cand_tvd < current_tvd - options.tol) {
          trace.entries.push_back({heater, old_phase, get_heater_phase(candidate, heater),
                                   current_tvd, cand_tvd});
          current = std::move(candidate);
          current_tvd = cand_tvd;
          continue;  // same heater, same direction
        }
        if (direction > 0.0) {
          direction = -1.0;
          continue;
        }
        direction = 1.0;
        if (++shrinks > options.max_shrinks) {
          break;
        }
        step *= 0.5;
      }
    }
  }
  return {std::move(current), std::move(trace)};
}

TrainingSet generate_training_set(const mesh::HardwareModel& hw, int samples,
                                  std::int64_t shots, std::uint64_t seed) {
  if (samples < 1) {
    throw std::invalid_argument("generate_training_set: samples must be >= 1");
  }
  TrainingSet out;
  out.mode_count = hw.mode_count;
  out.heater_count = hw.heater_count();
  out.samples.reserve(static_cast<std::size_t>(samples));
  Rng rng(derive_seed(seed, {0x7261696eULL}));
  for (int s = 0; s < samples; ++s) {
    TrainingSample sample;
    sample.voltages = mesh::VoltageSetting(hw.heater_count());
    for (int h = 0; h < hw.heater_count(); ++h) {
      sample.voltages[h] = rng.uniform(0.0, hw.voltage_max);
    }
    sample.input_mode = s % hw.mode_count;
    const ModeState column = mesh::transfer_column(sample.voltages, hw, sample.input_mode);
    sample.observed = detect::measure(column, hw, shots,
                                      derive_seed(seed, {0x6d656173ULL, static_cast<std::uint64_t>(s)}));
    out.samples.push_back(std::move(sample));
  }
  return out;
}

namespace detail {

namespace {

// Forward pass through the ideal mesh and reverse-mode gradient of the
// per-sample MSE with respect to the heater phase vector.
//
// Wirtinger bookkeeping: W = dL/da (coefficient of da, so dL = 2 Re(W^T da));
// through a_out = T a_in the pullback is W_in = T^T W_out, and
// dL/dx = 2 Re(W_out^T (dT/dx) a_in) for a cell parameter x.
struct SampleGrad {
  double loss = 0.0;
  Eigen::VectorXd phase_grad;  // dL/dphi, per heater
};

SampleGrad sample_loss_grad(const TrainingSample& sample, int mode_count,
                            const Eigen::MatrixXd& c2, const Eigen::VectorXd& c0) {
  static thread_local std::vector<std::pair<int, int>> grid_cache;
  static thread_local int grid_modes = -1;
  if (grid_modes != mode_count) {
    grid_cache = mesh::detail::rectangle_positions(mode_count);
    grid_modes = mode_count;
  }
  const auto& grid = grid_cache;
  const int ncells = static_cast<int>(grid.size());
  const Eigen::VectorXd v2 = sample.voltages.cwiseProduct(sample.voltages);
  const Eigen::VectorXd phases = c2 * v2 + c0;

  // forward, storing per-cell input amplitudes
  ModeState a = ModeState::Zero(mode_count);
  a[sample.input_mode] = 1.0;
  std::vector<std::array<Complex, 2>> saved(static_cast<std::size_t>(ncells));
  std::vector<Eigen::Matrix2cd> cells(static_cast<std::size_t>(ncells));
  for (int j = 0; j < ncells; ++j) {
    const int m = grid[static_cast<std::size_t>(j)].second;
    const double th = phases[2 * j];
    const double ph = phases[2 * j + 1];
    const double s = std::sin(th / 2.0), c = std::cos(th / 2.0);
    const Complex pref = Complex(0, 1) * std::exp(Complex(0, th / 2.0));
    const Complex e = std::exp(Complex(0, ph));
    Eigen::Matrix2cd t;
    t << pref * e * s, pref * c, pref * e * c, -pref * s;
    saved[static_cast<std::size_t>(j)] = {a[m], a[m + 1]};
    const Complex x = a[m], y = a[m + 1];
    a[m] = t(0, 0) * x + t(0, 1) * y;
    a[m + 1] = t(1, 0) * x + t(1, 1) * y;
    cells[static_cast<std::size_t>(j)] = t;
  }

  const int n = mode_count;
  Eigen::VectorXd intensity(n);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    intensity[i] = std::norm(a[i]);
    total += intensity[i];
  }
  SampleGrad out;
  out.phase_grad = Eigen::VectorXd::Zero(2 * ncells);
  const auto& q = sample.observed.probabilities;
  Eigen::VectorXd p(n), gp(n);
  for (int i = 0; i < n; ++i) {
    p[i] = intensity[i] / total;
    const double diff = p[i] - q[static_cast<std::size_t>(i)];
    out.loss += diff * diff;
    gp[i] = 2.0 * diff;
  }
  out.loss /= n;
  gp /= n;

  const double dot = gp.dot(p);
  ModeState w(n);  // W = dL/da = (dL/dI) .* conj(a)
  for (int i = 0; i < n; ++i) {
    const double dldi = (gp[i] - dot) / total;
    w[i] = dldi * std::conj(a[i]);
  }

  for (int j = ncells - 1; j >= 0; --j) {
    const int m = grid[static_cast<std::size_t>(j)].second;
    const Eigen::Matrix2cd& t = cells[static_cast<std::size_t>(j)];
    const Complex xin = saved[static_cast<std::size_t>(j)][0];
    const Complex yin = saved[static_cast<std::size_t>(j)][1];
    const double th = phases[2 * j];
    const double ph = phases[2 * j + 1];

    // dT/dtheta a_in and dT/dphi a_in (see cell factorisation)
    const Complex e_ph = std::exp(Complex(0, ph));
    const Complex u1 = e_ph * xin;  // after PS(phi)
    // after first BS: (u1 + i yin)/sqrt2, (i u1 + yin)/sqrt2
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    const Complex b0 = inv_sqrt2 * (u1 + Complex(0, 1) * yin);
    const Complex b1 = inv_sqrt2 * (Complex(0, 1) * u1 + yin);
    const Complex u3 = std::exp(Complex(0, th)) * b0;  // top arm after PS(theta)
    // dT/dtheta a_in = BS . (i u3, 0)
    const Complex dth0 = inv_sqrt2 * Complex(0, 1) * u3;
    const Complex dth1 = inv_sqrt2 * Complex(0, 1) * (Complex(0, 1) * u3);
    // dT/dphi a_in = T . (i x_in, 0)
    const Complex dph0 = t(0, 0) * Complex(0, 1) * xin;
    const Complex dph1 = t(1, 0) * Complex(0, 1) * xin;

    const Complex wm = w[m], wm1 = w[m + 1];
    out.phase_grad[2 * j] = 2.0 * (wm * dth0 + wm1 * dth1).real();
    out.phase_grad[2 * j + 1] = 2.0 * (wm * dph0 + wm1 * dph1).real();

    // W_in = T^T W_out
    w[m] = t(0, 0) * wm + t(1, 0) * wm1;
    w[m + 1] = t(0, 1) * wm + t(1, 1) * wm1;
    (void)b1;
  }
  return out;
}

template <bool Parallel>
double batch_gradient_impl(const TrainingSet& data, std::span<const int> batch,
                           const Eigen::MatrixXd& c2, const Eigen::VectorXd& c0,
                           Eigen::MatrixXd& grad_c2, Eigen::VectorXd& grad_c0) {
  const int b = static_cast<int>(batch.size());
  std::vector<SampleGrad> grads(static_cast<std::size_t>(b));
#pragma omp parallel for schedule(static) if (Parallel)
  for (int i = 0; i < b; ++i) {
    grads[static_cast<std::size_t>(i)] =
        sample_loss_grad(data.samples[static_cast<std::size_t>(batch[i])], data.mode_count, c2, c0);
  }
  grad_c2.setZero(c2.rows(), c2.cols());
  grad_c0.setZero(c0.size());
  double loss = 0.0;
  const double inv_b = 1.0 / b;
  for (int i = 0; i < b; ++i) {  // fixed-order reduction
    const auto& g = grads[static_cast<std::size_t>(i)];
    const auto& sample = data.samples[static_cast<std::size_t>(batch[i])];
    const Eigen::VectorXd v2 = sample.voltages.cwiseProduct(sample.voltages);
    grad_c2.noalias() += (inv_b * g.phase_grad) * v2.transpose();
    grad_c0.noalias() += inv_b * g.phase_grad;
    loss += inv_b * g.loss;
  }
  return loss;
}

}  // namespace

double batch_gradient(const TrainingSet& data, std::span<const int> batch,
                      const Eigen::MatrixXd& c2, const Eigen::VectorXd& c0,
                      Eigen::MatrixXd& grad_c2, Eigen::VectorXd& grad_c0) {
  return batch_gradient_impl<true>(data, batch, c2, c0, grad_c2, grad_c0);
}

double batch_gradient_serial(const TrainingSet& data, std::span<const int> batch,
                             const Eigen::MatrixXd& c2, const Eigen::VectorXd& c0,
                             Eigen::MatrixXd& grad_c2, Eigen::VectorXd& grad_c0) {
  return batch_gradient_impl<false>(data, batch, c2, c0, grad_c2, grad_c0);
}

}  // namespace detail

ClearBoxModel clearbox_train(const TrainingSet& data, const TrainOptions& options) {
  if (data.samples.empty()) {
    throw std::invalid_argument("clearbox_train: empty dataset");
  }
  const int nh = data.heater_count;
  const int nsamples = static_cast<int>(data.samples.size());
  const int batch = std::min(options.batch_size, nsamples);

  Eigen::MatrixXd c2 = Eigen::MatrixXd::Identity(nh, nh) * 0.24;
  Eigen::VectorXd c0 = Eigen::VectorXd::Constant(nh, kPi);

  Eigen::MatrixXd m2 = Eigen::MatrixXd::Zero(nh, nh), v2m = Eigen::MatrixXd::Zero(nh, nh);
  Eigen::VectorXd m0 = Eigen::VectorXd::Zero(nh), v0 = Eigen::VectorXd::Zero(nh);
  Eigen::MatrixXd gc2(nh, nh);
  Eigen::VectorXd gc0(nh);

  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  std::int64_t t = 0;

  std::vector<int> order(static_cast<std::size_t>(nsamples));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(options.seed, {0x73687566ULL}));

  double best = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  double epoch_loss = 0.0;
  int epoch = 0;
  for (; epoch < options.epochs; ++epoch) {
    const double lr = options.learning_rate * 0.5 *
                      (1.0 + std::cos(kPi * static_cast<double>(epoch) / options.epochs));
    for (std::size_t i = order.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(rng.next_u64() % i);
      std::swap(order[i - 1], order[j]);
    }
    epoch_loss = 0.0;
    int batches = 0;
    for (int lo = 0; lo + batch <= nsamples; lo += batch) {
      ++t;
      ++batches;
      const std::span<const int> sel(order.data() + lo, static_cast<std::size_t>(batch));
      epoch_loss += detail::batch_gradient(data, sel, c2, c0, gc2, gc0);
      const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t));
      const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t));
      m2 = kBeta1 * m2 + (1.0 - kBeta1) * gc2;
      v2m = kBeta2 * v2m + (1.0 - kBeta2) * gc2.cwiseProduct(gc2);
      c2.array() -= lr * (m2.array() / bc1) / ((v2m.array() / bc2).sqrt() + kEps);
      m0 = kBeta1 * m0 + (1.0 - kBeta1) * gc0;
      v0 = kBeta2 * v0 + (1.0 - kBeta2) * gc0.cwiseProduct(gc0);
      c0.array() -= lr * (m0.array() / bc1) / ((v0.array() / bc2).sqrt() + kEps);
    }
    epoch_loss /= batches;
    if (!std::isfinite(epoch_loss) || epoch_loss > 100.0 * best + 1e-6) {
      std::ostringstream oss;
      oss << "clearbox_train: diverged at epoch " << epoch << " (loss " << epoch_loss
          << ", best " << best << ")";
      throw std::runtime_error(oss.str());
    }
    if (epoch_loss < best * (1.0 - 1e-6)) {
      best = epoch_loss;
      best_epoch = epoch;
    } else if (epoch - best_epoch >= options.plateau) {
      ++epoch;
      break;
    }
  }

  ClearBoxModel model;
  model.crosstalk_estimate = std::move(c2);
  model.passive_estimate = std::move(c0);
  model.final_loss = epoch_loss;
  model.epochs_run = epoch;
  return model;
}

mesh::VoltageSetting clearbox_invert(const ClearBoxModel& model,
                                     const Eigen::VectorXd& desired_phases,
                                     double voltage_max) {
  const int nh = static_cast<int>(model.passive_estimate.size());
  if (desired_phases.size() != nh) {
    throw std::invalid_argument("clearbox_invert: phase vector length mismatch");
  }
  const double x_max = voltage_max * voltage_max;
  Eigen::VectorXd r(nh);
  for (int i = 0; i < nh; ++i) {
    r[i] = wrap_2pi(desired_phases[i] - model.passive_estimate[i]);
  }
  const Eigen::PartialPivLU<Eigen::MatrixXd> lu(model.crosstalk_estimate);
  Eigen::VectorXd x;
  for (int round = 0; round < 32; ++round) {
    x = lu.solve(r);
    bool changed = false;
    for (int i = 0; i < nh; ++i) {
      if (x[i] < 0.0) {
        r[i] += kTwoPi;  // wrap up
        changed = true;
      } else if (x[i] > x_max && r[i] >= kTwoPi) {
        r[i] -= kTwoPi;
        changed = true;
      }
    }
    if (!changed) {
      break;
    }
  }
  std::vector<int> offending;
  for (int i = 0; i < nh; ++i) {
    if (x[i] < 0.0 || x[i] > x_max) {
      offending.push_back(i);
    }
  }
  if (!offending.empty()) {
    std::ostringstream oss;
    oss << "clearbox_invert: no feasible voltages for heaters";
    for (int h : offending) oss << ' ' << h;
    throw std::runtime_error(oss.str());
  }
  return x.cwiseSqrt();
}

mesh::MeshProgram refine_program_for_hardware(const mesh::MeshProgram& program,
                                              const mesh::HardwareModel& hw, int input_mode,
                                              const Distribution& target,
                                              std::span<const int> heaters,
                                              const RefineOptions& options) {
  if (target.size() != static_cast<std::size_t>(hw.mode_count)) {
    throw std::invalid_argument("refine_program_for_hardware: target length mismatch");
  }
  const int np = static_cast<int>(heaters.size());
  const Eigen::VectorXd base = program.heater_phases();

  // loss and gradient via central differences would be too slow; reuse the
  // imperfect-cell forward with the same reverse-mode scheme
  const auto grid = mesh::detail::rectangle_positions(hw.mode_count);
  const int ncells = static_cast<int>(grid.size());
  const int n = hw.mode_count;

  auto loss_grad = [&](const Eigen::VectorXd& phases, Eigen::VectorXd& grad_phases) {
    ModeState a = ModeState::Zero(n);
    a[input_mode] = 1.0;
    std::vector<std::array<Complex, 2>> saved(static_cast<std::size_t>(ncells));
    std::vector<Eigen::Matrix2cd> cells(static_cast<std::size_t>(ncells));
    for (int j = 0; j < ncells; ++j) {
      const int m = grid[static_cast<std::size_t>(j)].second;
      const auto& refl = hw.splitter_reflectivities[static_cast<std::size_t>(j)];
      Eigen::Matrix2cd ps_phi = Eigen::Matrix2cd::Identity();
      ps_phi(0, 0) = std::exp(Complex(0, phases[2 * j + 1]));
      Eigen::Matrix2cd ps_th = Eigen::Matrix2cd::Identity();
      ps_th(0, 0) = std::exp(Complex(0, phases[2 * j]));
      const Eigen::Matrix2cd t = splitter(refl[1]) * ps_th * splitter(refl[0]) * ps_phi;
      saved[static_cast<std::size_t>(j)] = {a[m], a[m + 1]};
      const Complex x = a[m], y = a[m + 1];
      a[m] = t(0, 0) * x + t(0, 1) * y;
      a[m + 1] = t(1, 0) * x + t(1, 1) * y;
      cells[static_cast<std::size_t>(j)] = t;
    }
    Eigen::VectorXd intensity(n);
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      intensity[i] = std::norm(a[i]);
      total += intensity[i];
    }
    double loss = 0.0;
    Eigen::VectorXd gp(n), p(n);
    for (int i = 0; i < n; ++i) {
      p[i] = intensity[i] / total;
      const double diff = p[i] - target.probabilities[static_cast<std::size_t>(i)];
      loss += diff * diff;
      gp[i] = 2.0 * diff;
    }
    const double dot = gp.dot(p);
    ModeState w(n);
    for (int i = 0; i < n; ++i) {
      w[i] = ((gp[i] - dot) / total) * std::conj(a[i]);
    }
    grad_phases.setZero(phases.size());
    for (int j = ncells - 1; j >= 0; --j) {
      const int m = grid[static_cast<std::size_t>(j)].second;
      const auto& refl = hw.splitter_reflectivities[static_cast<std::size_t>(j)];
      const Eigen::Matrix2cd& t = cells[static_cast<std::size_t>(j)];
      const Complex xin = saved[static_cast<std::size_t>(j)][0];
      const Complex yin = saved[static_cast<std::size_t>(j)][1];
      const Complex e_ph = std::exp(Complex(0, phases[2 * j + 1]));
      const double r_in = refl[0], r_out = refl[1];
      const double a_in = std::sqrt(r_in), b_in = std::sqrt(1.0 - r_in);
      const double a_out = std::sqrt(r_out), b_out = std::sqrt(1.0 - r_out);
      const Complex u1 = e_ph * xin;
      const Complex b0 = a_in * u1 + Complex(0, b_in) * yin;
      const Complex u3 = std::exp(Complex(0, phases[2 * j])) * b0;
      const Complex dth0 = a_out * Complex(0, 1) * u3;
      const Complex dth1 = Complex(0, b_out) * Complex(0, 1) * u3;
      const Complex dph0 = t(0, 0) * Complex(0, 1) * xin;
      const Complex dph1 = t(1, 0) * Complex(0, 1) * xin;
      const Complex wm = w[m], wm1 = w[m + 1];
      grad_phases[2 * j] = 2.0 * (wm * dth0 + wm1 * dth1).real();
      grad_phases[2 * j + 1] = 2.0 * (wm * dph0 + wm1 * dph1).real();
      w[m] = t(0, 0) * wm + t(1, 0) * wm1;
      w[m + 1] = t(0, 1) * wm + t(1, 1) * wm1;
    }
    return loss;
  };

  Eigen::VectorXd grad(base.size());
  Eigen::VectorXd best_phases = base;
  double best_loss = loss_grad(base, grad);

  Rng jrng(options.seed);
  for (int restart = 0; restart <= options.restarts; ++restart) {
    Eigen::VectorXd phases = base;
    if (restart > 0) {
      for (int k = 0; k < np; ++k) {
        phases[heaters[static_cast<std::size_t>(k)]] += options.jitter * jrng.normal();
      }
    }
    Eigen::VectorXd m = Eigen::VectorXd::Zero(np), v = Eigen::VectorXd::Zero(np);
    constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-10;
    for (int it = 1; it <= options.iterations; ++it) {
      loss_grad(phases, grad);
      const double lr = options.learning_rate *
                        0.5 * (1.0 + std::cos(kPi * static_cast<double>(it - 1) / options.iterations));
      const double bc1 = 1.0 - std::pow(kBeta1, it);
      const double bc2 = 1.0 - std::pow(kBeta2, it);
      for (int k = 0; k < np; ++k) {
        const int h = heaters[static_cast<std::size_t>(k)];
        const double g = grad[h];
        m[k] = kBeta1 * m[k] + (1.0 - kBeta1) * g;
        v[k] = kBeta2 * v[k] + (1.0 - kBeta2) * g * g;
        phases[h] -= lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + kEps);
      }
    }
    const double final = loss_grad(phases, grad);
    if (final < best_loss) {
      best_loss = final;
      best_phases = phases;
    }
  }

  mesh::MeshProgram refined = program;
  refined.set_heater_phases(best_phases);
  return refined;
}

}  // namespace mzg::calib
