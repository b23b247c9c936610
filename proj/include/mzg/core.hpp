#pragma once

#include <Eigen/Dense>
#include <complex>
#include <optional>
#include <vector>

namespace mzg {

using Complex = std::complex<double>;
using ComplexMatrix = Eigen::MatrixXcd;
using ModeState = Eigen::VectorXcd;

inline constexpr double kUnitaryTol = 1e-10;
inline constexpr double kNormTol = 1e-12;

/// Fixed 50:50 splitter convention used everywhere: (1/sqrt2) [[1, i],[i, 1]].
Eigen::Matrix2cd balanced_splitter();

/// Splitter with reflectivity r (power staying in the same arm):
/// [[sqrt(r), i sqrt(1-r)],[i sqrt(1-r), sqrt(r)]].
Eigen::Matrix2cd splitter(double r);

/// Max-norm of (m^dag m - I) <= tol.  Throws std::invalid_argument when m is
/// not square.
bool is_unitary(const ComplexMatrix& m, double tol);

/// Matrix-vector product; dimension-checked.
ModeState apply(const ComplexMatrix& m, const ModeState& s);

/// Normalized probability vector over output channels plus provenance.
struct Distribution {
  std::vector<double> probabilities;          // sums to 1
  std::vector<std::int64_t> raw_counts;       // empty unless sampled
  double survival = 1.0;                      // mass before renormalization

  std::size_t size() const { return probabilities.size(); }
};

/// Element-wise |amplitude|^2, renormalized; survival records the
/// pre-normalization total.  Throws on an all-zero state.
Distribution output_distribution(const ModeState& s);

/// Identity-padded embedding of u into the top-left block of a larger space.
ComplexMatrix embed_top_left(const ComplexMatrix& u, Eigen::Index modes);

}  // namespace mzg
