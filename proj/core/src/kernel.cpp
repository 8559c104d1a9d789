#include "mflq/kernel.hpp"

#include <cmath>

namespace mflq {

namespace {

void require_same_grid(const MatrixKernel& a, const MatrixKernel& b, const char* op) {
  if (!a.same_grid(b)) throw std::invalid_argument(std::string(op) + ": grid mismatch");
}

}  // namespace

VectorField apply_operator(const MatrixKernel& K, const VectorField& f) {
  if (K.grid() != f.grid) throw std::invalid_argument("apply_operator: grid mismatch");
  const int n = K.grid().size();
  const int c = K.block_cols();
  Eigen::VectorXd x(static_cast<Eigen::Index>(n) * c);
  for (int j = 0; j < n; ++j) {
    if (f[j].size() != c) throw std::invalid_argument("apply_operator: field dimension mismatch");
    x.segment(static_cast<Eigen::Index>(j) * c, c) = f[j];
  }
  const Eigen::VectorXd y = K.grid().weight() * (K.dense() * x);
  return unstack(K.grid(), K.block_rows(), y);
}

MatrixKernel kernel_adjoint(const MatrixKernel& K) {
  return MatrixKernel::FromDense(K.grid(), K.block_cols(), K.block_rows(),
                                 K.dense().transpose());
}

MatrixKernel kernel_compose(const MatrixKernel& K, const MatrixKernel& W) {
  require_same_grid(K, W, "kernel_compose");
  if (K.block_cols() != W.block_rows())
    throw std::invalid_argument("kernel_compose: block dimension mismatch");
  return MatrixKernel::FromDense(K.grid(), K.block_rows(), W.block_cols(),
                                 K.grid().weight() * (K.dense() * W.dense()));
}

MatrixKernel kernel_mult_compose(const MatrixKernel& K, const MatrixField& L,
                                 const MatrixKernel& W) {
  require_same_grid(K, W, "kernel_mult_compose");
  if (K.grid() != L.grid) throw std::invalid_argument("kernel_mult_compose: grid mismatch");
  const int n = K.grid().size();
  const int k = K.block_cols();
  for (int i = 0; i < n; ++i)
    if (L[i].rows() != k || L[i].cols() != W.block_rows())
      throw std::invalid_argument("kernel_mult_compose: block dimension mismatch");
  // h · K · blockdiag(L) · W, with the block-diagonal product applied row-wise.
  Eigen::MatrixXd mid(static_cast<Eigen::Index>(n) * k, W.dense().cols());
  for (int w = 0; w < n; ++w)
    mid.middleRows(static_cast<Eigen::Index>(w) * k, k) =
        L[w] * W.dense().middleRows(static_cast<Eigen::Index>(w) * W.block_rows(),
                                    W.block_rows());
  return MatrixKernel::FromDense(K.grid(), K.block_rows(), W.block_cols(),
                                 K.grid().weight() * (K.dense() * mid));
}

double kernel_l2_norm(const MatrixKernel& K) { return K.grid().weight() * K.dense().norm(); }

OperatorNormResult operator_norm(const MatrixKernel& K, int max_iter, double tol,
                                 Eigen::VectorXd* warm) {
  OperatorNormResult res;
  const double h = K.grid().weight();
  const Eigen::MatrixXd& A = K.dense();
  if (A.size() == 0 || A.isZero(0.0)) return res;  // ‖T_0‖ = 0

  Eigen::VectorXd v;
  if (warm != nullptr && warm->size() == A.cols()) {
    v = *warm;
  } else {
    v = Eigen::VectorXd::Ones(A.cols());
  }
  double nv = v.norm();
  if (nv == 0.0) v = Eigen::VectorXd::Ones(A.cols()), nv = v.norm();
  v /= nv;

  // Power iteration on the normal operator f ↦ T_{K*}(T_K f) = h²·Aᵀ(A f);
  // its largest eigenvalue is ‖T_K‖².
  double lambda = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    Eigen::VectorXd w = (h * h) * (A.transpose() * (A * v));
    const double lambda_new = v.dot(w);
    const double wn = w.norm();
    if (wn == 0.0) {  // v in the null space; restart from ones
      v = Eigen::VectorXd::Ones(A.cols()).normalized();
      continue;
    }
    v = w / wn;
    res.iterations = it + 1;
    if (std::abs(lambda_new - lambda) <= tol * std::max(1.0, std::abs(lambda_new))) {
      lambda = lambda_new;
      if (warm != nullptr) *warm = v;
      res.value = std::sqrt(std::max(lambda, 0.0));
      return res;
    }
    lambda = lambda_new;
  }
  if (warm != nullptr) *warm = v;
  res.value = std::sqrt(std::max(lambda, 0.0));
  res.converged = false;
  return res;
}

bool is_symmetric_kernel(const MatrixKernel& K, double tol) {
  if (K.block_rows() != K.block_cols()) return false;
  return ((K.dense() - K.dense().transpose()).cwiseAbs().maxCoeff() <= tol);
}

MatrixKernel left_multiply(const MatrixField& L, const MatrixKernel& K) {
  if (K.grid() != L.grid) throw std::invalid_argument("left_multiply: grid mismatch");
  const int n = K.grid().size();
  const int r = static_cast<int>(L[0].rows());
  Eigen::MatrixXd out(static_cast<Eigen::Index>(n) * r, K.dense().cols());
  for (int i = 0; i < n; ++i)
    out.middleRows(static_cast<Eigen::Index>(i) * r, r) =
        L[i] * K.dense().middleRows(static_cast<Eigen::Index>(i) * K.block_rows(),
                                    K.block_rows());
  return MatrixKernel::FromDense(K.grid(), r, K.block_cols(), std::move(out));
}

MatrixKernel right_multiply(const MatrixKernel& K, const MatrixField& R) {
  if (K.grid() != R.grid) throw std::invalid_argument("right_multiply: grid mismatch");
  const int n = K.grid().size();
  const int c = static_cast<int>(R[0].cols());
  Eigen::MatrixXd out(K.dense().rows(), static_cast<Eigen::Index>(n) * c);
  for (int j = 0; j < n; ++j)
    out.middleCols(static_cast<Eigen::Index>(j) * c, c) =
        K.dense().middleCols(static_cast<Eigen::Index>(j) * K.block_cols(), K.block_cols()) *
        R[j];
  return MatrixKernel::FromDense(K.grid(), K.block_rows(), c, std::move(out));
}

Eigen::MatrixXd block_diagonal(const MatrixField& D) {
  const int n = D.size();
  Eigen::Index rows = 0, cols = 0;
  for (int i = 0; i < n; ++i) rows += D[i].rows(), cols += D[i].cols();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(rows, cols);
  Eigen::Index r = 0, c = 0;
  for (int i = 0; i < n; ++i) {
    out.block(r, c, D[i].rows(), D[i].cols()) = D[i];
    r += D[i].rows();
    c += D[i].cols();
  }
  return out;
}

}  // namespace mflq
