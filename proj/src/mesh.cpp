#include "mzg/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include <json.hpp>

#include "mzg/rng.hpp"

namespace mzg::mesh {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

double wrap_2pi(double x) {
  double y = std::fmod(x, kTwoPi);
  if (y < 0.0) y += kTwoPi;
  return y;
}

Eigen::Matrix2cd ideal_cell(double theta, double phi) {
  const double s = std::sin(theta / 2.0);
  const double c = std::cos(theta / 2.0);
  const Complex pref = Complex(0, 1) * std::exp(Complex(0, theta / 2.0));
  const Complex e = std::exp(Complex(0, phi));
  Eigen::Matrix2cd t;
  t << pref * e * s, pref * c, pref * e * c, -pref * s;
  return t;
}

Eigen::Matrix2cd hardware_cell(double theta, double phi, double r_in, double r_out) {
  Eigen::Matrix2cd ps_phi = Eigen::Matrix2cd::Identity();
  ps_phi(0, 0) = std::exp(Complex(0, phi));
  Eigen::Matrix2cd ps_theta = Eigen::Matrix2cd::Identity();
  ps_theta(0, 0) = std::exp(Complex(0, theta));
  return splitter(r_out) * ps_theta * splitter(r_in) * ps_phi;
}

void apply_cell_to_rows(ComplexMatrix& u, int m, const Eigen::Matrix2cd& t) {
  u.middleRows(m, 2) = t * u.middleRows(m, 2);
}

void apply_cell_to_state(ModeState& a, int m, const Eigen::Matrix2cd& t) {
  const Complex x = a[m], y = a[m + 1];
  a[m] = t(0, 0) * x + t(0, 1) * y;
  a[m + 1] = t(1, 0) * x + t(1, 1) * y;
}

}  // namespace

namespace detail {

std::vector<std::pair<int, int>> rectangle_positions(int n) {
  std::vector<std::pair<int, int>> pos;
  pos.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
  for (int col = 0; col < n; ++col) {
    for (int m = col % 2; m + 1 < n; m += 2) {
      pos.emplace_back(col, m);
    }
  }
  return pos;
}

}  // namespace detail

Eigen::VectorXd MeshProgram::heater_phases() const {
  Eigen::VectorXd p(heater_count());
  for (int j = 0; j < cell_count(); ++j) {
    p[2 * j] = cells[static_cast<std::size_t>(j)].theta;
    p[2 * j + 1] = cells[static_cast<std::size_t>(j)].phi;
  }
  return p;
}

void MeshProgram::set_heater_phases(const Eigen::VectorXd& phases) {
  if (phases.size() != heater_count()) {
    throw std::invalid_argument("set_heater_phases: length mismatch");
  }
  for (int j = 0; j < cell_count(); ++j) {
    cells[static_cast<std::size_t>(j)].theta = wrap_2pi(phases[2 * j]);
    cells[static_cast<std::size_t>(j)].phi = wrap_2pi(phases[2 * j + 1]);
  }
}

MeshProgram identity_program(int mode_count) {
  if (mode_count < 2) {
    throw std::invalid_argument("identity_program: need at least 2 modes");
  }
  MeshProgram p;
  p.mode_count = mode_count;
  for (const auto& [col, m] : detail::rectangle_positions(mode_count)) {
    p.cells.push_back({m, col, kPi, kPi});
  }
  p.output_phases = Eigen::VectorXd::Zero(mode_count);
  return p;
}

MeshProgram embed_program(const MeshProgram& inner, int mode_count) {
  if (inner.mode_count > mode_count) {
    throw std::invalid_argument("embed_program: inner mesh exceeds mode count");
  }
  MeshProgram p = identity_program(mode_count);
  // corner cells (column < n, both modes < n) map one-to-one onto the inner grid
  std::size_t k = 0;
  for (auto& cell : p.cells) {
    if (cell.column < inner.mode_count && cell.top_mode + 1 < inner.mode_count) {
      const Cell& src = inner.cells.at(k++);
      if (src.column != cell.column || src.top_mode != cell.top_mode) {
        throw std::logic_error("embed_program: grid mismatch");
      }
      cell.theta = src.theta;
      cell.phi = src.phi;
    }
  }
  if (k != inner.cells.size()) {
    throw std::logic_error("embed_program: not all inner cells placed");
  }
  p.output_phases.head(inner.mode_count) = inner.output_phases;
  return p;
}

double HardwareModel::mode_loss_db(int i) const {
  const double t = input_amp[i] * output_amp[i];
  return -20.0 * std::log10(t);
}

ImperfectionConfig ImperfectionConfig::ideal() {
  ImperfectionConfig c;
  c.splitter_deviation = 0.0;
  c.crosstalk_scale = 0.0;
  c.loss_db_min = c.loss_db_median = c.loss_db_max = 0.0;
  c.snspd_eff_min = c.snspd_eff_max = 1.0;
  c.apd_eff_min = c.apd_eff_max = 1.0;
  return c;
}

void ImperfectionConfig::validate() const {
  if (splitter_deviation < 0.0 || splitter_deviation >= 0.5) {
    throw std::invalid_argument("ImperfectionConfig: splitter deviation out of range");
  }
  if (crosstalk_scale < 0.0 || crosstalk_decay <= 0.0) {
    throw std::invalid_argument("ImperfectionConfig: invalid cross-talk parameters");
  }
  if (loss_db_min > loss_db_median || loss_db_median > loss_db_max || loss_db_min < 0.0) {
    throw std::invalid_argument("ImperfectionConfig: loss range must satisfy min <= median <= max");
  }
  if (c2_diag_min <= 0.0 || c2_diag_min > c2_diag_max) {
    throw std::invalid_argument("ImperfectionConfig: invalid heater response range");
  }
  if (snspd_eff_min <= 0.0 || snspd_eff_min > snspd_eff_max || snspd_eff_max > 1.0 ||
      apd_eff_min <= 0.0 || apd_eff_min > apd_eff_max || apd_eff_max > 1.0) {
    throw std::invalid_argument("ImperfectionConfig: efficiencies must lie in (0, 1]");
  }
  if (voltage_max <= 0.0) {
    throw std::invalid_argument("ImperfectionConfig: voltage_max must be positive");
  }
}

HardwareModel sample_hardware(std::uint64_t seed, const ImperfectionConfig& config,
                              int mode_count) {
  config.validate();
  if (mode_count < 2) {
    throw std::invalid_argument("sample_hardware: need at least 2 modes");
  }
  HardwareModel hw;
  hw.mode_count = mode_count;
  hw.voltage_max = config.voltage_max;
  const int cells = hw.cell_count();
  const int heaters = hw.heater_count();

  Rng rng(seed);

  hw.splitter_reflectivities.resize(static_cast<std::size_t>(cells));
  for (auto& r : hw.splitter_reflectivities) {
    r[0] = 0.5 + config.splitter_deviation * (2.0 * rng.uniform() - 1.0);
    r[1] = 0.5 + config.splitter_deviation * (2.0 * rng.uniform() - 1.0);
  }

  hw.crosstalk = Eigen::MatrixXd::Zero(heaters, heaters);
  for (int i = 0; i < heaters; ++i) {
    hw.crosstalk(i, i) = rng.uniform(config.c2_diag_min, config.c2_diag_max);
  }
  if (config.crosstalk_scale > 0.0) {
    for (int i = 0; i < heaters; ++i) {
      for (int j = 0; j < heaters; ++j) {
        if (i == j) continue;
        const double d = std::abs(i - j);
        const double jitter = rng.uniform(0.5, 1.5);
        hw.crosstalk(i, j) = config.crosstalk_scale * hw.crosstalk(i, i) *
                             std::exp(-d / config.crosstalk_decay) * jitter;
      }
    }
  }

  hw.passive_phases = Eigen::VectorXd(heaters);
  for (int i = 0; i < heaters; ++i) {
    hw.passive_phases[i] = rng.uniform(0.0, kTwoPi);
  }

  hw.input_amp = Eigen::VectorXd(mode_count);
  hw.output_amp = Eigen::VectorXd(mode_count);
  for (int i = 0; i < mode_count; ++i) {
    double db;
    if (config.loss_db_max <= config.loss_db_min) {
      db = config.loss_db_median;
    } else if (rng.uniform() < 0.5) {
      db = rng.uniform(config.loss_db_min, config.loss_db_median);
    } else {
      db = rng.uniform(config.loss_db_median, config.loss_db_max);
    }
    const double amp = std::pow(10.0, -db / 40.0);  // half the dB on each side
    hw.input_amp[i] = amp;
    hw.output_amp[i] = amp;
  }

  hw.detector_eff = Eigen::VectorXd(mode_count);
  for (int i = 0; i < mode_count; ++i) {
    if (i < config.snspd_count) {
      hw.detector_eff[i] = rng.uniform(config.snspd_eff_min, config.snspd_eff_max);
    } else {
      hw.detector_eff[i] = rng.uniform(config.apd_eff_min, config.apd_eff_max);
    }
  }
  return hw;
}

Eigen::VectorXd phases_from_voltages(const HardwareModel& hw, const VoltageSetting& v) {
  if (v.size() != hw.heater_count()) {
    throw std::invalid_argument("phases_from_voltages: voltage vector length mismatch");
  }
  Eigen::VectorXd phi = hw.crosstalk * v.cwiseProduct(v) + hw.passive_phases;
  for (int i = 0; i < phi.size(); ++i) {
    phi[i] = wrap_2pi(phi[i]);
  }
  return phi;
}

// ---------------------------------------------------------------------------
// Clements decomposition.
//
// Reduction moves (pair (m, m+1), s = sin(theta/2), c = cos(theta/2)):
//   right:  U <- U . T(theta, phi)^dag   nulls U[r][m] with
//           theta = 2 atan2(|U[r][m+1]|, |U[r][m]|),
//           phi   = arg(U[r][m]) - arg(-U[r][m+1])
//   left:   U <- T(theta, phi) . U       nulls U[m+1][c] with
//           theta = 2 atan2(|U[m][c]|, |U[m+1][c]|),
//           phi   = arg(U[m+1][c]) - arg(U[m][c])
// Left factors are then commuted through the residual diagonal with
//   T(theta, phi)^dag . diag(da, db)
//     = diag(db - phi - theta - pi, db - theta - pi) . T(theta, da - db)
// (bar cells theta = pi are re-emitted as exact identities instead).
// ---------------------------------------------------------------------------

MeshProgram clements_decompose(const ComplexMatrix& u_in) {
  if (!is_unitary(u_in, 1e-8)) {
    throw std::invalid_argument("clements_decompose: input is not unitary (tol 1e-8)");
  }
  const int n = static_cast<int>(u_in.rows());
  ComplexMatrix u = u_in;

  struct Op {
    int m;
    double theta;
    double phi;
  };
  std::vector<Op> right_ops, left_ops;
  constexpr double kZero = 1e-13;

  for (int i = 1; i < n; ++i) {
    if (i % 2 == 1) {
      for (int j = 0; j < i; ++j) {
        const int m = i - 1 - j;
        const int r = n - 1 - j;
        const Complex t_target = u(r, m);
        const Complex t_other = u(r, m + 1);
        double theta, phi;
        if (std::abs(t_target) < kZero) {
          theta = kPi;
          phi = kPi;
        } else {
          theta = 2.0 * std::atan2(std::abs(t_other), std::abs(t_target));
          phi = std::arg(t_target) - std::arg(-t_other);
        }
        u.middleCols(m, 2) = u.middleCols(m, 2) * ideal_cell(theta, phi).adjoint();
        right_ops.push_back({m, theta, phi});
      }
    } else {
      for (int j = 1; j <= i; ++j) {
        const int r = n + j - i - 1;
        const int c = j - 1;
        const int m = r - 1;
        const Complex t_target = u(r, c);
        const Complex t_above = u(m, c);
        double theta, phi;
        if (std::abs(t_target) < kZero) {
          theta = kPi;
          phi = kPi;
        } else {
          theta = 2.0 * std::atan2(std::abs(t_above), std::abs(t_target));
          phi = std::arg(t_target) - std::arg(t_above);
        }
        apply_cell_to_rows(u, m, ideal_cell(theta, phi));
        left_ops.push_back({m, theta, phi});
      }
    }
  }

  Eigen::VectorXd d(n);
  for (int i = 0; i < n; ++i) {
    d[i] = std::arg(u(i, i));
  }

  // commute the left factors through the diagonal, innermost first
  std::vector<Op> converted;
  converted.reserve(left_ops.size());
  for (auto it = left_ops.rbegin(); it != left_ops.rend(); ++it) {
    const Op& op = *it;
    const double da = d[op.m];
    const double db = d[op.m + 1];
    if (std::abs(std::cos(op.theta / 2.0)) < 1e-9) {
      // bar cell: T(pi, phi)^dag . D = diag(da - phi + pi, db) . identity cell
      converted.push_back({op.m, kPi, kPi});
      d[op.m] = da - op.phi + kPi;
    } else {
      converted.push_back({op.m, op.theta, da - db});
      d[op.m] = db - op.phi - op.theta - kPi;
      d[op.m + 1] = db - op.theta - kPi;
    }
  }

  // propagation order: right ops first, then the converted left ops
  std::vector<Op> ordered = std::move(right_ops);
  ordered.insert(ordered.end(), converted.begin(), converted.end());

  // greedy column placement; inversions introduced by the final sort only
  // ever swap disjoint cells
  std::vector<int> last_col(static_cast<std::size_t>(n), -1);
  MeshProgram prog;
  prog.mode_count = n;
  prog.cells.reserve(ordered.size());
  for (const Op& op : ordered) {
    const int col = 1 + std::max(std::max(op.m > 0 ? last_col[static_cast<std::size_t>(op.m - 1)] : -1,
                                          last_col[static_cast<std::size_t>(op.m)]),
                                 last_col[static_cast<std::size_t>(op.m + 1)]);
    last_col[static_cast<std::size_t>(op.m)] = col;
    last_col[static_cast<std::size_t>(op.m + 1)] = col;
    prog.cells.push_back({op.m, col, wrap_2pi(op.theta), wrap_2pi(op.phi)});
  }
  std::stable_sort(prog.cells.begin(), prog.cells.end(), [](const Cell& a, const Cell& b) {
    return a.column != b.column ? a.column < b.column : a.top_mode < b.top_mode;
  });

  const auto expect = detail::rectangle_positions(n);
  if (prog.cells.size() != expect.size()) {
    throw std::logic_error("clements_decompose: cell count mismatch");
  }
  for (std::size_t k = 0; k < expect.size(); ++k) {
    if (prog.cells[k].column != expect[k].first || prog.cells[k].top_mode != expect[k].second) {
      throw std::logic_error("clements_decompose: cells do not form the Clements rectangle");
    }
  }

  prog.output_phases = Eigen::VectorXd(n);
  for (int i = 0; i < n; ++i) {
    prog.output_phases[i] = wrap_2pi(d[i]);
  }
  return prog;
}

ComplexMatrix recompose(const MeshProgram& program) {
  const int n = program.mode_count;
  ComplexMatrix u = ComplexMatrix::Identity(n, n);
  for (const Cell& cell : program.cells) {
    apply_cell_to_rows(u, cell.top_mode, ideal_cell(cell.theta, cell.phi));
  }
  for (int i = 0; i < n; ++i) {
    u.row(i) *= std::exp(Complex(0, program.output_phases[i]));
  }
  return u;
}

namespace {

ComplexMatrix transfer_impl(const HardwareModel& hw, const Eigen::VectorXd& heater_phases,
                            const Eigen::VectorXd* output_phases) {
  const int n = hw.mode_count;
  const auto grid = detail::rectangle_positions(n);
  ComplexMatrix u = ComplexMatrix::Identity(n, n);
  for (int i = 0; i < n; ++i) {
    u(i, i) = hw.input_amp[i];
  }
  for (std::size_t j = 0; j < grid.size(); ++j) {
    const auto& [col, m] = grid[j];
    (void)col;
    const auto& r = hw.splitter_reflectivities[j];
    apply_cell_to_rows(u, m,
                       hardware_cell(heater_phases[2 * static_cast<int>(j)],
                                     heater_phases[2 * static_cast<int>(j) + 1], r[0], r[1]));
  }
  for (int i = 0; i < n; ++i) {
    Complex f = hw.output_amp[i];
    if (output_phases != nullptr) {
      f *= std::exp(Complex(0, (*output_phases)[i]));
    }
    u.row(i) *= f;
  }
  return u;
}

ModeState transfer_column_impl(const HardwareModel& hw, const Eigen::VectorXd& heater_phases,
                               const Eigen::VectorXd* output_phases, int input_mode) {
  const int n = hw.mode_count;
  if (input_mode < 0 || input_mode >= n) {
    throw std::invalid_argument("transfer_column: input mode out of range");
  }
  const auto grid = detail::rectangle_positions(n);
  ModeState a = ModeState::Zero(n);
  a[input_mode] = hw.input_amp[input_mode];
  for (std::size_t j = 0; j < grid.size(); ++j) {
    const int m = grid[j].second;
    const auto& r = hw.splitter_reflectivities[j];
    apply_cell_to_state(a, m,
                        hardware_cell(heater_phases[2 * static_cast<int>(j)],
                                      heater_phases[2 * static_cast<int>(j) + 1], r[0], r[1]));
  }
  for (int i = 0; i < n; ++i) {
    Complex f = hw.output_amp[i];
    if (output_phases != nullptr) {
      f *= std::exp(Complex(0, (*output_phases)[i]));
    }
    a[i] *= f;
  }
  return a;
}

void check_program(const MeshProgram& program, const HardwareModel& hw) {
  if (program.mode_count != hw.mode_count) {
    throw std::invalid_argument("mesh_transfer: program/hardware mode count mismatch");
  }
  if (program.cell_count() != hw.cell_count()) {
    throw std::invalid_argument("mesh_transfer: program cell count mismatch");
  }
}

}  // namespace

ComplexMatrix mesh_transfer(const MeshProgram& program, const HardwareModel& hw) {
  check_program(program, hw);
  return transfer_impl(hw, program.heater_phases(), &program.output_phases);
}

ComplexMatrix mesh_transfer(const VoltageSetting& v, const HardwareModel& hw) {
  return transfer_impl(hw, phases_from_voltages(hw, v), nullptr);
}

ModeState transfer_column(const MeshProgram& program, const HardwareModel& hw, int input_mode) {
  check_program(program, hw);
  return transfer_column_impl(hw, program.heater_phases(), &program.output_phases, input_mode);
}

ModeState transfer_column(const VoltageSetting& v, const HardwareModel& hw, int input_mode) {
  return transfer_column_impl(hw, phases_from_voltages(hw, v), nullptr, input_mode);
}

ModeState ideal_column_from_phases(const Eigen::VectorXd& heater_phases, int mode_count,
                                   int input_mode) {
  const auto grid = detail::rectangle_positions(mode_count);
  if (heater_phases.size() != 2 * static_cast<Eigen::Index>(grid.size())) {
    throw std::invalid_argument("ideal_column_from_phases: phase vector length mismatch");
  }
  ModeState a = ModeState::Zero(mode_count);
  a[input_mode] = 1.0;
  for (std::size_t j = 0; j < grid.size(); ++j) {
    const int m = grid[j].second;
    apply_cell_to_state(a, m,
                        ideal_cell(heater_phases[2 * static_cast<int>(j)],
                                   heater_phases[2 * static_cast<int>(j) + 1]));
  }
  return a;
}

// --------------------------- JSON serialization ----------------------------

namespace {

nlohmann::json vec_to_json(const Eigen::VectorXd& v) {
  nlohmann::json a = nlohmann::json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Eigen::VectorXd vec_from_json(const nlohmann::json& a) {
  Eigen::VectorXd v(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<int>(i)] = a[i].get<double>();
  return v;
}

}  // namespace

std::string hardware_to_json(const HardwareModel& hw) {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["mode_count"] = hw.mode_count;
  j["voltage_max"] = hw.voltage_max;
  nlohmann::json refl = nlohmann::json::array();
  for (const auto& r : hw.splitter_reflectivities) {
    refl.push_back({r[0], r[1]});
  }
  j["splitter_reflectivities"] = std::move(refl);
  nlohmann::json c2 = nlohmann::json::array();
  for (int i = 0; i < hw.crosstalk.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (int k = 0; k < hw.crosstalk.cols(); ++k) row.push_back(hw.crosstalk(i, k));
    c2.push_back(std::move(row));
  }
  j["crosstalk_matrix"] = std::move(c2);
  j["passive_phases"] = vec_to_json(hw.passive_phases);
  j["input_loss"] = vec_to_json(hw.input_amp);
  j["output_loss"] = vec_to_json(hw.output_amp);
  j["detector_efficiencies"] = vec_to_json(hw.detector_eff);
  return j.dump();
}

HardwareModel hardware_from_json(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text);
  if (j.at("schema_version").get<int>() != 1) {
    throw std::runtime_error("hardware_from_json: unsupported schema version");
  }
  HardwareModel hw;
  hw.mode_count = j.at("mode_count").get<int>();
  hw.voltage_max = j.at("voltage_max").get<double>();
  for (const auto& r : j.at("splitter_reflectivities")) {
    hw.splitter_reflectivities.push_back({r[0].get<double>(), r[1].get<double>()});
  }
  const auto& c2 = j.at("crosstalk_matrix");
  hw.crosstalk = Eigen::MatrixXd(c2.size(), c2.size());
  for (std::size_t i = 0; i < c2.size(); ++i) {
    for (std::size_t k = 0; k < c2[i].size(); ++k) {
      hw.crosstalk(static_cast<int>(i), static_cast<int>(k)) = c2[i][k].get<double>();
    }
  }
  hw.passive_phases = vec_from_json(j.at("passive_phases"));
  hw.input_amp = vec_from_json(j.at("input_loss"));
  hw.output_amp = vec_from_json(j.at("output_loss"));
  hw.detector_eff = vec_from_json(j.at("detector_efficiencies"));
  return hw;
}

}  // namespace mzg::mesh
