#include "mzg/core.hpp"

#include <cmath>
#include <stdexcept>

namespace mzg {

Eigen::Matrix2cd balanced_splitter() { return splitter(0.5); }

Eigen::Matrix2cd splitter(double r) {
  if (r < 0.0 || r > 1.0) {
    throw std::invalid_argument("splitter reflectivity must be in [0, 1]");
  }
  const double a = std::sqrt(r);
  const double b = std::sqrt(1.0 - r);
  Eigen::Matrix2cd m;
  m << Complex(a, 0), Complex(0, b), Complex(0, b), Complex(a, 0);
  return m;
}

bool is_unitary(const ComplexMatrix& m, double tol) {
  if (m.rows() != m.cols()) {
    throw std::invalid_argument("is_unitary: matrix must be square");
  }
  const ComplexMatrix g = m.adjoint() * m - ComplexMatrix::Identity(m.rows(), m.cols());
  return g.cwiseAbs().maxCoeff() <= tol;
}

ModeState apply(const ComplexMatrix& m, const ModeState& s) {
  if (m.cols() != s.size()) {
    throw std::invalid_argument("apply: dimension mismatch");
  }
  return m * s;
}

Distribution output_distribution(const ModeState& s) {
  const double total = s.squaredNorm();
  if (total <= 0.0) {
    throw std::domain_error("output_distribution: degenerate all-zero state");
  }
  Distribution d;
  d.survival = total;
  d.probabilities.resize(static_cast<std::size_t>(s.size()));
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    d.probabilities[static_cast<std::size_t>(i)] = std::norm(s[i]) / total;
  }
  return d;
}

ComplexMatrix embed_top_left(const ComplexMatrix& u, Eigen::Index modes) {
  if (u.rows() != u.cols()) {
    throw std::invalid_argument("embed_top_left: matrix must be square");
  }
  if (u.rows() > modes) {
    throw std::invalid_argument("embed_top_left: block exceeds mode count");
  }
  ComplexMatrix v = ComplexMatrix::Identity(modes, modes);
  v.topLeftCorner(u.rows(), u.cols()) = u;
  return v;
}

}  // namespace mzg
