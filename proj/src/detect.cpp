#include "mzg/detect.hpp"

#include <cmath>
#include <stdexcept>

#include "mzg/rng.hpp"

namespace mzg::detect {

namespace {

constexpr std::int64_t kChunkShots = 1 << 16;

std::vector<double> click_cdf(const ModeState& column, const mesh::HardwareModel& hw) {
  if (column.size() != hw.mode_count) {
    throw std::invalid_argument("detect: column length does not match hardware");
  }
  std::vector<double> cdf(static_cast<std::size_t>(hw.mode_count));
  double acc = 0.0;
  for (int i = 0; i < hw.mode_count; ++i) {
    acc += std::norm(column[i]) * hw.detector_eff[i];
    cdf[static_cast<std::size_t>(i)] = acc;
  }
  if (acc > 1.0 + 1e-9) {
    throw std::invalid_argument("detect: click probabilities exceed 1 (non-physical column)");
  }
  return cdf;
}

// Shots are split into fixed-size chunks with per-chunk derived streams, so
// counts do not depend on the number of threads.
template <bool Parallel>
std::vector<std::int64_t> sample_counts(const std::vector<double>& cdf, std::int64_t shots,
                                        std::uint64_t seed) {
  const std::size_t bins = cdf.size() + 1;  // trailing no-click bin
  const std::int64_t chunks = (shots + kChunkShots - 1) / kChunkShots;
  std::vector<std::int64_t> counts(bins, 0);
#pragma omp parallel if (Parallel)
  {
    std::vector<std::int64_t> local(bins, 0);
#pragma omp for schedule(static) nowait
    for (std::int64_t c = 0; c < chunks; ++c) {
      Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(c)}));
      const std::int64_t lo = c * kChunkShots;
      const std::int64_t hi = std::min(shots, lo + kChunkShots);
      for (std::int64_t s = lo; s < hi; ++s) {
        ++local[rng.categorical(cdf)];
      }
    }
#pragma omp critical
    for (std::size_t i = 0; i < bins; ++i) {
      counts[i] += local[i];
    }
  }
  return counts;
}

}  // namespace

ChannelCorrections corrections_from_hardware(const mesh::HardwareModel& hw) {
  ChannelCorrections c;
  c.factors.resize(static_cast<std::size_t>(hw.mode_count));
  for (int i = 0; i < hw.mode_count; ++i) {
    const double eta = hw.output_amp[i] * hw.output_amp[i] * hw.detector_eff[i];
    c.factors[static_cast<std::size_t>(i)] = 1.0 / eta;
  }
  return c;
}

std::vector<std::int64_t> detect(const ComplexMatrix& transfer, int input_mode,
                                 std::int64_t shots, const mesh::HardwareModel& hw,
                                 std::uint64_t seed) {
  if (input_mode < 0 || input_mode >= transfer.cols()) {
    throw std::invalid_argument("detect: input mode out of range");
  }
  return detect_column(transfer.col(input_mode), shots, hw, seed);
}

std::vector<std::int64_t> detect_column(const ModeState& column, std::int64_t shots,
                                        const mesh::HardwareModel& hw, std::uint64_t seed) {
  if (shots < 1) {
    throw std::invalid_argument("detect: shots must be >= 1");
  }
  return sample_counts<true>(click_cdf(column, hw), shots, seed);
}

std::vector<std::int64_t> detect_column_serial(const ModeState& column, std::int64_t shots,
                                               const mesh::HardwareModel& hw,
                                               std::uint64_t seed) {
  if (shots < 1) {
    throw std::invalid_argument("detect: shots must be >= 1");
  }
  return sample_counts<false>(click_cdf(column, hw), shots, seed);
}

Distribution correct_and_normalize(std::span<const std::int64_t> counts,
                                   const ChannelCorrections& corr) {
  const std::size_t n = corr.factors.size();
  if (counts.size() != n && counts.size() != n + 1) {
    throw std::invalid_argument("correct_and_normalize: counts/corrections length mismatch");
  }
  std::int64_t clicked = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (counts[i] < 0) {
      throw std::invalid_argument("correct_and_normalize: negative count");
    }
    clicked += counts[i];
  }
  if (clicked == 0) {
    throw std::domain_error("correct_and_normalize: all counts are zero");
  }
  Distribution d;
  d.raw_counts.assign(counts.begin(), counts.begin() + static_cast<std::ptrdiff_t>(n));
  std::int64_t total = clicked;
  if (counts.size() == n + 1) {
    total += counts[n];
  }
  d.survival = static_cast<double>(clicked) / static_cast<double>(total);
  d.probabilities.resize(n);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    d.probabilities[i] = static_cast<double>(counts[i]) * corr.factors[i];
    acc += d.probabilities[i];
  }
  for (double& p : d.probabilities) {
    p /= acc;
  }
  return d;
}

Distribution exact_corrected(const ModeState& column, const mesh::HardwareModel& hw) {
  const auto corr = corrections_from_hardware(hw);
  Distribution d;
  d.probabilities.resize(static_cast<std::size_t>(hw.mode_count));
  double acc = 0.0;
  double clicked = 0.0;
  for (int i = 0; i < hw.mode_count; ++i) {
    const double click = std::norm(column[i]) * hw.detector_eff[i];
    clicked += click;
    d.probabilities[static_cast<std::size_t>(i)] = click * corr.factors[static_cast<std::size_t>(i)];
    acc += d.probabilities[static_cast<std::size_t>(i)];
  }
  if (acc <= 0.0) {
    throw std::domain_error("exact_corrected: degenerate all-zero column");
  }
  for (double& p : d.probabilities) {
    p /= acc;
  }
  d.survival = clicked;
  return d;
}

Distribution measure(const ModeState& column, const mesh::HardwareModel& hw,
                     std::int64_t shots, std::uint64_t seed) {
  if (shots == 0) {
    return exact_corrected(column, hw);
  }
  const auto counts = detect_column(column, shots, hw, seed);
  return correct_and_normalize(counts, corrections_from_hardware(hw));
}

double success_probability_estimate(const Distribution& dist, const std::set<int>& marked) {
  double s = 0.0;
  for (int m : marked) {
    if (m < 0 || static_cast<std::size_t>(m) >= dist.probabilities.size()) {
      throw std::invalid_argument("success_probability_estimate: marked index out of range");
    }
    s += dist.probabilities[static_cast<std::size_t>(m)];
  }
  return s;
}

}  // namespace mzg::detect
