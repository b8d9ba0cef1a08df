#ifndef OWS_LINALG_HPP
#define OWS_LINALG_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "ows/error.hpp"

namespace ows {

using Index = Eigen::Index;

// Parameters and activations are stored row-major so that a (tokens x features)
// activation block has one token per contiguous row.
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;

template <typename Scalar>
struct TruncatedSvd {
  MatrixX<Scalar> u;  // rows x r, orthonormal columns
  VectorX<Scalar> s;  // r values, non-increasing, >= 0
  MatrixX<Scalar> v;  // cols x r, orthonormal columns

  Index rank() const { return s.size(); }

  MatrixX<Scalar> reconstruct() const { return u * s.asDiagonal() * v.transpose(); }
};

inline std::string shape_string(Index rows, Index cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& x) {
  return x.derived().array().isFinite().all();
}

/// Checked dense product; throws ShapeError when a.cols() != b.rows().
template <typename DerivedA, typename DerivedB>
MatrixX<typename DerivedA::Scalar> matmul(const Eigen::MatrixBase<DerivedA>& a,
                                          const Eigen::MatrixBase<DerivedB>& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: cannot multiply " + shape_string(a.rows(), a.cols()) + " by " +
                     shape_string(b.rows(), b.cols()));
  }
  return a * b;
}

/// Euclidean norm of every column, one entry per column.
template <typename Derived>
VectorX<typename Derived::Scalar> column_l2_norms(const Eigen::MatrixBase<Derived>& x) {
  if (x.rows() == 0 || x.cols() == 0) {
    throw ShapeError("column_l2_norms: empty matrix " + shape_string(x.rows(), x.cols()));
  }
  return x.colwise().norm().transpose();
}

/// Largest absolute entry of Q^T Q - I.
template <typename Derived>
typename Derived::Scalar orthonormality_error(const Eigen::MatrixBase<Derived>& q) {
  using Scalar = typename Derived::Scalar;
  if (q.cols() == 0) return Scalar(0);
  MatrixX<Scalar> gram = q.transpose() * q;
  gram.diagonal().array() -= Scalar(1);
  return gram.cwiseAbs().maxCoeff();
}

namespace detail {

template <typename Scalar>
using ColMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

// One-sided (Hestenes) Jacobi on a tall matrix. On return the columns of `a`
// are mutually orthogonal and a_in = a_out * v^T with v orthogonal.
template <typename Scalar>
void one_sided_jacobi(ColMatrix<Scalar>& a, ColMatrix<Scalar>& v) {
  const Index n = a.cols();
  v.setIdentity(n, n);
  const Scalar tol = std::numeric_limits<Scalar>::epsilon() * Scalar(std::max<Index>(a.rows(), 1));
  constexpr int kMaxSweeps = 80;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (Index i = 0; i + 1 < n; ++i) {
      for (Index j = i + 1; j < n; ++j) {
        const Scalar alpha = a.col(i).squaredNorm();
        const Scalar beta = a.col(j).squaredNorm();
        const Scalar gamma = a.col(i).dot(a.col(j));
        if (gamma == Scalar(0) || std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const Scalar zeta = (beta - alpha) / (Scalar(2) * gamma);
        const Scalar t =
            std::copysign(Scalar(1), zeta) / (std::abs(zeta) + std::hypot(Scalar(1), zeta));
        const Scalar c = Scalar(1) / std::hypot(Scalar(1), t);
        const Scalar s = c * t;
        for (Index k = 0; k < a.rows(); ++k) {
          const Scalar ai = a(k, i);
          const Scalar aj = a(k, j);
          a(k, i) = c * ai - s * aj;
          a(k, j) = s * ai + c * aj;
        }
        for (Index k = 0; k < n; ++k) {
          const Scalar vi = v(k, i);
          const Scalar vj = v(k, j);
          v(k, i) = c * vi - s * vj;
          v(k, j) = s * vi + c * vj;
        }
      }
    }
    if (!rotated) break;
  }
}

// Modified Gram-Schmidt over the columns of q. Columns flagged in `null_cols`
// (and any column that collapses during orthogonalization) are replaced by
// canonical basis vectors orthogonalized against the rest.
template <typename Scalar>
void orthonormalize_with_completion(ColMatrix<Scalar>& q, std::vector<bool> null_cols) {
  const Index m = q.rows();
  Index next_canonical = 0;
  for (Index k = 0; k < q.cols(); ++k) {
    bool done = false;
    if (!null_cols[static_cast<size_t>(k)]) {
      VectorX<Scalar> col = q.col(k);
      for (int pass = 0; pass < 2; ++pass) {
        for (Index p = 0; p < k; ++p) col -= q.col(p).dot(col) * q.col(p);
      }
      const Scalar norm = col.norm();
      if (norm > Scalar(0.5)) {
        q.col(k) = col / norm;
        done = true;
      }
    }
    while (!done) {
      if (next_canonical >= m) {
        throw ValueError("truncated_svd: failed to complete orthonormal basis");
      }
      VectorX<Scalar> col = VectorX<Scalar>::Unit(m, next_canonical++);
      for (int pass = 0; pass < 2; ++pass) {
        for (Index p = 0; p < k; ++p) col -= q.col(p).dot(col) * q.col(p);
      }
      const Scalar norm = col.norm();
      if (norm > Scalar(0.5)) {
        q.col(k) = col / norm;
        done = true;
      }
    }
  }
}

}  // namespace detail

/// Best rank-r approximation u * diag(s) * v^T of m (Eckart-Young).
///
/// Computed by one-sided Jacobi on the taller orientation of m, so singular
/// values are accurate to working precision. Singular directions belonging to
/// (numerically) zero singular values are completed to an orthonormal basis,
/// which keeps u and v orthonormal even for rank-deficient input.
template <typename Derived>
TruncatedSvd<typename Derived::Scalar> truncated_svd(const Eigen::MatrixBase<Derived>& m, Index r) {
  using Scalar = typename Derived::Scalar;
  using Work = detail::ColMatrix<Scalar>;

  const Index min_dim = std::min(m.rows(), m.cols());
  if (r < 1 || r > min_dim) {
    throw RankError("truncated_svd: rank " + std::to_string(r) + " outside [1, " +
                    std::to_string(min_dim) + "] for " + shape_string(m.rows(), m.cols()));
  }
  if (!all_finite(m)) throw ValueError("truncated_svd: input contains non-finite entries");

  const bool wide = m.rows() < m.cols();
  Work work = wide ? Work(m.transpose()) : Work(m);
  Work rotations;
  detail::one_sided_jacobi(work, rotations);

  const Index n = work.cols();
  VectorX<Scalar> sigma = work.colwise().norm().transpose();
  std::vector<Index> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), Index(0));
  std::stable_sort(order.begin(), order.end(),
                   [&](Index x, Index y) { return sigma(x) > sigma(y); });

  const Scalar sigma_max = n > 0 ? sigma(order.front()) : Scalar(0);
  const Scalar null_threshold =
      sigma_max * std::numeric_limits<Scalar>::epsilon() * Scalar(std::max(m.rows(), m.cols()));

  Work tall_basis(work.rows(), n);
  Work short_basis(n, n);
  VectorX<Scalar> sorted(n);
  std::vector<bool> null_cols(static_cast<size_t>(n), false);
  for (Index k = 0; k < n; ++k) {
    const Index src = order[static_cast<size_t>(k)];
    const Scalar s = sigma(src);
    const bool is_null = !(s > null_threshold) || s == Scalar(0);
    null_cols[static_cast<size_t>(k)] = is_null;
    sorted(k) = is_null ? Scalar(0) : s;
    tall_basis.col(k) = is_null ? VectorX<Scalar>::Zero(work.rows()) : VectorX<Scalar>(work.col(src) / s);
    short_basis.col(k) = rotations.col(src);
  }
  detail::orthonormalize_with_completion(tall_basis, null_cols);

  TruncatedSvd<Scalar> out;
  out.s = sorted.head(r);
  if (wide) {
    out.u = short_basis.leftCols(r);
    out.v = tall_basis.leftCols(r);
  } else {
    out.u = tall_basis.leftCols(r);
    out.v = short_basis.leftCols(r);
  }
  return out;
}

}  // namespace ows

#endif  // OWS_LINALG_HPP
