#pragma once

#include <cstdint>
#include <set>
#include <span>
#include <vector>

#include "mzg/core.hpp"
#include "mzg/mesh.hpp"

namespace mzg::detect {

/// Per-output efficiency corrections eta_tot^{-1} >= 1, covering the full
/// chain behind the mesh cells: output-mode transmission, fibre coupling and
/// detector efficiency.
struct ChannelCorrections {
  std::vector<double> factors;
};

/// Corrections measured the way the experiment does it: route light to each
/// output in turn, so the factor undoes output loss and detector efficiency.
ChannelCorrections corrections_from_hardware(const mesh::HardwareModel& hw);

/// Multinomial click counts over outputs plus a trailing no-click bin.
/// Click probability of output i is |column_i|^2 * detector_eff_i.
/// Seed-deterministic, independent of thread count.
std::vector<std::int64_t> detect(const ComplexMatrix& transfer, int input_mode,
                                 std::int64_t shots, const mesh::HardwareModel& hw,
                                 std::uint64_t seed);

/// Same from a precomputed transfer column.
std::vector<std::int64_t> detect_column(const ModeState& column, std::int64_t shots,
                                        const mesh::HardwareModel& hw, std::uint64_t seed);

/// Single-thread reference for detect_column; bit-identical by construction.
std::vector<std::int64_t> detect_column_serial(const ModeState& column, std::int64_t shots,
                                               const mesh::HardwareModel& hw,
                                               std::uint64_t seed);

/// probabilities proportional to counts_i * corr_i; the no-click bin (when
/// present as a trailing extra entry) is dropped before normalizing.
/// survival is the clicked fraction.  Throws when all counts are zero.
Distribution correct_and_normalize(std::span<const std::int64_t> counts,
                                   const ChannelCorrections& corr);

/// Infinite-shot limit of detect + correct_and_normalize.
Distribution exact_corrected(const ModeState& column, const mesh::HardwareModel& hw);

/// Measured distribution of a transfer column: sampled when shots > 0,
/// exact when shots == 0.
Distribution measure(const ModeState& column, const mesh::HardwareModel& hw,
                     std::int64_t shots, std::uint64_t seed);

/// Sum of corrected probabilities over the marked output channels.
double success_probability_estimate(const Distribution& dist, const std::set<int>& marked);

}  // namespace mzg::detect
