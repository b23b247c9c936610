#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "mzg/core.hpp"
#include "mzg/detect.hpp"
#include "mzg/mesh.hpp"

namespace mzg::calib {

/// Total variation distance (1/2) sum |p_i - q_i|.  Inputs must be equal
/// length and normalized within 1e-9.
double tvd(const Distribution& p, const Distribution& q);

/// Heater ids (theta before phi, program order) of the cells inside the
/// top-left n-mode sub-mesh carrying the algorithm.
std::vector<int> engaged_heaters(const mesh::MeshProgram& program, int n);

struct TraceEntry {
  int heater = 0;
  double old_phase = 0.0;
  double new_phase = 0.0;
  double tvd_before = 0.0;
  double tvd_after = 0.0;
};

struct OptimisationTrace {
  std::vector<TraceEntry> entries;
};

using Evaluator = std::function<Distribution(const mesh::MeshProgram&)>;

struct SequentialOptions {
  double step = 0.02;       // radians
  double tol = 0.0;         // improvement threshold; pick ~2x the noise floor
  int passes = 2;
  int max_shrinks = 3;      // per-heater geometric step halvings
  bool shuffle = false;     // randomized heater order (robustness studies)
  std::uint64_t shuffle_seed = 0;
};

/// Coordinate-descent TVD minimisation, one heater at a time: perturb the
/// phase by +-step, keep changes that improve the measured TVD by more than
/// tol, stay on a heater until it stops improving, then move on.  All listed
/// heaters are visited `passes` times.  Accepted TVD values are
/// non-increasing by construction.
std::pair<mesh::MeshProgram, OptimisationTrace> sequential_optimise(
    const Evaluator& evaluate, const mesh::MeshProgram& program, const Distribution& target,
    std::span<const int> heaters, const SequentialOptions& options);

/// Expected TVD between a sampled and the true distribution from multinomial
/// noise alone; used to set SequentialOptions::tol.
double shot_noise_floor(const Distribution& target, std::int64_t shots);

// ------------------------------ clear box ---------------------------------

struct TrainingSample {
  mesh::VoltageSetting voltages;
  int input_mode = 0;
  Distribution observed;  // efficiency-corrected
};

struct TrainingSet {
  int mode_count = 0;
  int heater_count = 0;
  std::vector<TrainingSample> samples;
};

/// Random-voltage characterisation set; input modes cycle round-robin so
/// every heater sees light.  shots == 0 gives noiseless distributions.
TrainingSet generate_training_set(const mesh::HardwareModel& hw, int samples,
                                  std::int64_t shots, std::uint64_t seed);

/// Learned voltage-to-phase model phi = C2_hat . V^2 + c0_hat.
struct ClearBoxModel {
  Eigen::MatrixXd crosstalk_estimate;
  Eigen::VectorXd passive_estimate;
  double final_loss = 0.0;
  int epochs_run = 0;
};

struct TrainOptions {
  int epochs = 2000;
  int batch_size = 32;
  double learning_rate = 1e-2;  // cosine-decayed
  int plateau = 100;            // early-stop window (epochs)
  std::uint64_t seed = 0;       // mini-batch shuffling
};

/// Adam on the mean squared error between predicted and observed
/// distributions.  Throws on divergence.
ClearBoxModel clearbox_train(const TrainingSet& data, const TrainOptions& options);

/// Solve C2_hat . V^2 = desired + 2 pi k - c0_hat for nonnegative wraps k
/// until voltages are valid; throws an infeasibility error naming the
/// offending heaters otherwise.
mesh::VoltageSetting clearbox_invert(const ClearBoxModel& model,
                                     const Eigen::VectorXd& desired_phases,
                                     double voltage_max);

struct RefineOptions {
  int iterations = 400;
  double learning_rate = 0.05;
  int restarts = 4;
  double jitter = 0.15;         // radians, for restart starting points
  std::uint64_t seed = 12345;
};

/// Re-optimise the listed heater phases against the hardware's known
/// splitter reflectivities so the realized input-mode distribution matches
/// the target (virtual-replica compilation).  Losses and detection are
/// corrected elsewhere and do not enter.
mesh::MeshProgram refine_program_for_hardware(const mesh::MeshProgram& program,
                                              const mesh::HardwareModel& hw, int input_mode,
                                              const Distribution& target,
                                              std::span<const int> heaters,
                                              const RefineOptions& options);

namespace detail {

/// Mean-squared-error loss over a batch and its gradient with respect to
/// (C2, c0).  OpenMP-parallel over samples; per-sample results are reduced
/// in index order, so output is independent of thread count.
double batch_gradient(const TrainingSet& data, std::span<const int> batch,
                      const Eigen::MatrixXd& c2, const Eigen::VectorXd& c0,
                      Eigen::MatrixXd& grad_c2, Eigen::VectorXd& grad_c0);

/// Single-thread reference; must match batch_gradient bit-exactly.
double batch_gradient_serial(const TrainingSet& data, std::span<const int> batch,
                             const Eigen::MatrixXd& c2, const Eigen::VectorXd& c0,
                             Eigen::MatrixXd& grad_c2, Eigen::VectorXd& grad_c0);

}  // namespace detail

}  // namespace mzg::calib
