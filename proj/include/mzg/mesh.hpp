#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mzg/core.hpp"

namespace mzg::mesh {

/// One Mach-Zehnder unit cell on the mode pair (top_mode, top_mode+1).
///
/// Cell convention, used identically by decompose/recompose/transfer:
///   T(theta, phi) = BS . PS_top(theta) . BS . PS_top(phi)
/// (matrix product; light meets the phi shifter first, theta sits between
/// the two fixed splitters).  With the balanced splitter this is
///   i e^{i theta/2} [[e^{i phi} sin(t2), cos(t2)],
///                    [e^{i phi} cos(t2), -sin(t2)]],   t2 = theta/2,
/// so theta = pi is the bar state and theta = 0 the cross state.
struct Cell {
  int top_mode = 0;
  int column = 0;
  double theta = 0.0;
  double phi = 0.0;
};

/// Phase program for a rectangular Clements mesh: cells in column-major
/// propagation order plus a final per-mode output phase screen.
struct MeshProgram {
  int mode_count = 0;
  std::vector<Cell> cells;             // size mode_count*(mode_count-1)/2
  Eigen::VectorXd output_phases;       // size mode_count, radians in [0, 2pi)

  int cell_count() const { return static_cast<int>(cells.size()); }
  int heater_count() const { return 2 * cell_count(); }

  /// Heater layout: heater 2j drives theta of cell j, heater 2j+1 its phi.
  Eigen::VectorXd heater_phases() const;
  void set_heater_phases(const Eigen::VectorXd& phases);
};

/// All-bar program (every cell at theta=pi, phi=pi, i.e. exact identity).
MeshProgram identity_program(int mode_count);

/// Small-mesh program placed in the top-left corner of a larger mesh; all
/// other cells identity, remaining output phases zero.
MeshProgram embed_program(const MeshProgram& inner, int mode_count);

/// Ground-truth imperfections of a physical mesh.
struct HardwareModel {
  int mode_count = 0;
  std::vector<std::array<double, 2>> splitter_reflectivities;  // per cell {input-side, output-side}
  Eigen::MatrixXd crosstalk;       // C2, heater_count x heater_count, rad/V^2
  Eigen::VectorXd passive_phases;  // c0, per heater, radians
  Eigen::VectorXd input_amp;       // per-mode amplitude transmission factors
  Eigen::VectorXd output_amp;
  Eigen::VectorXd detector_eff;    // per-output eta_f * eta_d in (0, 1]
  double voltage_max = 10.0;

  int cell_count() const { return mode_count * (mode_count - 1) / 2; }
  int heater_count() const { return 2 * cell_count(); }

  /// End-to-end dB loss of mode i (input + output attenuators).
  double mode_loss_db(int i) const;
};

/// Sampling ranges for sample_hardware.  Defaults follow the device figures:
/// splitters 50 +- 4.5 %, residual cross-talk 2 % of the diagonal response
/// with e^{-d/3} index-distance decay, end-to-end losses 3-7 dB with median
/// 4.2 dB, SNSPD-grade detectors on the first four outputs and APD-grade
/// detectors elsewhere.
struct ImperfectionConfig {
  double splitter_deviation = 0.045;
  double crosstalk_scale = 0.02;
  double crosstalk_decay = 3.0;
  double loss_db_min = 3.0;
  double loss_db_median = 4.2;
  double loss_db_max = 7.0;
  double c2_diag_min = 0.21;   // rad / V^2
  double c2_diag_max = 0.27;
  double snspd_eff_min = 0.80;
  double snspd_eff_max = 0.95;
  double apd_eff_min = 0.35;
  double apd_eff_max = 0.60;
  int snspd_count = 4;
  double voltage_max = 10.0;

  static ImperfectionConfig ideal();
  void validate() const;
};

/// Seed-deterministic hardware instance.
HardwareModel sample_hardware(std::uint64_t seed, const ImperfectionConfig& config,
                              int mode_count);

/// Heater voltages, length heater_count.
using VoltageSetting = Eigen::VectorXd;

/// phi = C2 . (v ⊙ v) + c0, wrapped to [0, 2pi).
Eigen::VectorXd phases_from_voltages(const HardwareModel& hw, const VoltageSetting& v);

/// Clements decomposition; recomposition error <= 1e-8 guaranteed for
/// unitary input (checked with is_unitary(u, 1e-8)).
MeshProgram clements_decompose(const ComplexMatrix& u);

/// Ideal-splitter reconstruction of a program.
ComplexMatrix recompose(const MeshProgram& program);

/// Transfer matrix of the imperfect mesh with program phases applied as-set
/// ("naive" mode: splitter imbalance and losses apply, phases are exact).
ComplexMatrix mesh_transfer(const MeshProgram& program, const HardwareModel& hw);

/// Transfer matrix when the mesh is driven by heater voltages: phases come
/// from phases_from_voltages (cross-talk included).  No output phase screen
/// is applied (the physical mesh has no output shifters).
ComplexMatrix mesh_transfer(const VoltageSetting& v, const HardwareModel& hw);

/// Fast path: single-column evolution.  Equivalent to
/// mesh_transfer(...).col(input_mode) without building the full matrix.
ModeState transfer_column(const MeshProgram& program, const HardwareModel& hw,
                          int input_mode);
ModeState transfer_column(const VoltageSetting& v, const HardwareModel& hw,
                          int input_mode);

/// Ideal column evolution of a heater-phase vector on the canonical grid
/// (no splitter imbalance, no loss); used by model-fitting code.
ModeState ideal_column_from_phases(const Eigen::VectorXd& heater_phases,
                                   int mode_count, int input_mode);

/// JSON round-trip for HardwareModel (schema_version field included).
std::string hardware_to_json(const HardwareModel& hw);
HardwareModel hardware_from_json(const std::string& text);

namespace detail {
/// Canonical rectangle: positions of the column-major cell grid.
std::vector<std::pair<int, int>> rectangle_positions(int mode_count);  // (column, top_mode)
}  // namespace detail

}  // namespace mzg::mesh
