#pragma once

// Dense kernel shared by both engines. Everything is double precision and
// every factorization is recomputed from scratch (no incremental inverses).

#include <cmath>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "fedpob/errors.hpp"

namespace fedpob {

using Vector = Eigen::VectorXd;
using SymMatrix = Eigen::MatrixXd;

inline void require_same_dim(Eigen::Index expected, Eigen::Index got, const char* what) {
  if (expected != got) {
    throw DimensionMismatch(std::string(what) + ": expected dimension " + std::to_string(expected) +
                            ", got " + std::to_string(got));
  }
}

inline void require_square(const SymMatrix& a, const char* what) {
  if (a.rows() != a.cols()) {
    throw DimensionMismatch(std::string(what) + ": matrix is " + std::to_string(a.rows()) + "x" +
                            std::to_string(a.cols()));
  }
}

inline bool all_finite(const Eigen::Ref<const Eigen::MatrixXd>& m) { return m.allFinite(); }

// (A + A^T) / 2
inline SymMatrix symmetrized(const SymMatrix& a) {
  require_square(a, "symmetrized");
  return (a + a.transpose()) * 0.5;
}

// Lower Cholesky factor of a symmetrized copy of A. Reused when many solves
// share one matrix, e.g. scoring every arm against the same V.
class CholeskyFactor {
 public:
  explicit CholeskyFactor(const SymMatrix& a) {
    require_square(a, "cholesky");
    if (!a.allFinite()) throw NotPositiveDefinite("cholesky: matrix has non-finite entries");
    llt_.compute(symmetrized(a));
    if (llt_.info() != Eigen::Success) throw NotPositiveDefinite("cholesky: factorization failed");
    // Eigen's LLT does not flag tiny or negative pivots on every path.
    const auto diag = llt_.matrixLLT().diagonal();
    if (!diag.allFinite() || (diag.array() <= 0.0).any()) {
      throw NotPositiveDefinite("cholesky: non-positive pivot");
    }
  }

  Eigen::Index dim() const { return llt_.rows(); }

  Vector solve(const Vector& b) const {
    require_same_dim(dim(), b.size(), "solve_psd");
    return llt_.solve(b);
  }

  double log_det() const { return 2.0 * llt_.matrixLLT().diagonal().array().log().sum(); }

  // sqrt(u^T A^{-1} u) via one triangular solve: ||L^{-1} u||.
  double inv_weighted_norm(const Vector& u) const {
    require_same_dim(dim(), u.size(), "inv_weighted_norm");
    const Vector y = llt_.matrixL().solve(u);
    return y.norm();
  }

 private:
  Eigen::LLT<SymMatrix> llt_;
};

inline Vector solve_psd(const SymMatrix& a, const Vector& b) { return CholeskyFactor(a).solve(b); }

inline double log_det(const SymMatrix& a) { return CholeskyFactor(a).log_det(); }

inline SymMatrix rank_one_update(const SymMatrix& a, const Vector& u) {
  require_square(a, "rank_one_update");
  require_same_dim(a.rows(), u.size(), "rank_one_update");
  SymMatrix out = a;
  out.noalias() += u * u.transpose();
  return out;
}

inline double inv_weighted_norm(const SymMatrix& a, const Vector& u) {
  return CholeskyFactor(a).inv_weighted_norm(u);
}

inline SymMatrix identity_scaled(Eigen::Index d, double lambda) {
  return SymMatrix::Identity(d, d) * lambda;
}

}  // namespace fedpob
