#pragma once

#include <Eigen/Dense>

#include "mflq/grid.hpp"

namespace mflq {

/// Discretized element of L²(I×I; ℝ^{r×c}): an N×N grid of r×c blocks,
/// blocks(i,j) ≈ K(u_i, u_j), stored as one dense (N·r)×(N·c) matrix so that
/// the kernel calculus (adjoint, composition, operator application) reduces
/// to plain dense linear algebra:
///
///   T_K f        = h · dense · f                (stacked fields)
///   K*           = denseᵀ                       (block (i,j) ↦ blocks(j,i)ᵀ)
///   K ∘ W        = h · dense_K · dense_W
///   K ∘ L ∘ W    = h · dense_K · blockdiag(L) · dense_W
///   ‖T_K‖        = h · σ_max(dense)
///   ‖K‖_{L²}     = h · ‖dense‖_F
class MatrixKernel {
 public:
  MatrixKernel() = default;

  /// Zero kernel with r×c blocks.
  MatrixKernel(LabelGrid grid, int block_rows, int block_cols)
      : grid_(grid), r_(block_rows), c_(block_cols) {
    if (block_rows <= 0 || block_cols <= 0)
      throw std::invalid_argument("MatrixKernel: block dims must be positive");
    dense_ = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(grid_.size()) * r_,
                                   static_cast<Eigen::Index>(grid_.size()) * c_);
  }

  static MatrixKernel FromDense(LabelGrid grid, int block_rows, int block_cols,
                                Eigen::MatrixXd dense) {
    MatrixKernel k(grid, block_rows, block_cols);
    if (dense.rows() != k.dense_.rows() || dense.cols() != k.dense_.cols())
      throw std::invalid_argument("MatrixKernel::FromDense: dense shape mismatch");
    k.dense_ = std::move(dense);
    return k;
  }

  [[nodiscard]] const LabelGrid& grid() const { return grid_; }
  [[nodiscard]] int block_rows() const { return r_; }
  [[nodiscard]] int block_cols() const { return c_; }

  [[nodiscard]] auto block(int i, int j) {
    return dense_.block(static_cast<Eigen::Index>(i) * r_, static_cast<Eigen::Index>(j) * c_, r_, c_);
  }
  [[nodiscard]] auto block(int i, int j) const {
    return dense_.block(static_cast<Eigen::Index>(i) * r_, static_cast<Eigen::Index>(j) * c_, r_, c_);
  }

  [[nodiscard]] const Eigen::MatrixXd& dense() const { return dense_; }
  [[nodiscard]] Eigen::MatrixXd& dense() { return dense_; }

  [[nodiscard]] bool same_grid(const MatrixKernel& o) const { return grid_ == o.grid_; }

 private:
  LabelGrid grid_;
  int r_ = 0, c_ = 0;
  Eigen::MatrixXd dense_;
};

struct OperatorNormResult {
  double value = 0.0;   ///< best estimate of ‖T_K‖
  bool converged = true;
  int iterations = 0;
};

/// (T_K f)(u_i) = h · Σ_j blocks(i,j) f(u_j); rectangle rule for ∫ K(·,v)f(v)dv.
[[nodiscard]] VectorField apply_operator(const MatrixKernel& K, const VectorField& f);

/// K*(u,v) = K(v,u)ᵀ.  Involution: adjoint(adjoint(K)) == K bit-exactly.
[[nodiscard]] MatrixKernel kernel_adjoint(const MatrixKernel& K);

/// (K ∘ W)(u,v) = ∫ K(u,w) W(w,v) dw, rectangle rule.
[[nodiscard]] MatrixKernel kernel_compose(const MatrixKernel& K, const MatrixKernel& W);

/// (K ∘ L ∘ W)(u,v) = ∫ K(u,w) L(w) W(w,v) dw, rectangle rule.
[[nodiscard]] MatrixKernel kernel_mult_compose(const MatrixKernel& K, const MatrixField& L,
                                               const MatrixKernel& W);

/// ‖K‖_{L²(I×I)} = h · ‖dense‖_F — always an upper bound for ‖T_K‖.
[[nodiscard]] double kernel_l2_norm(const MatrixKernel& K);

/// ‖T_K‖ via power iteration on the normal operator T_{K*}T_K, started from
/// the deterministic all-ones vector (warm-started from `warm` when given,
/// which is updated in place for reuse along a trajectory).
[[nodiscard]] OperatorNormResult operator_norm(const MatrixKernel& K, int max_iter = 10000,
                                               double tol = 1e-10,
                                               Eigen::VectorXd* warm = nullptr);

/// Kernel symmetry K* = K within an absolute per-entry tolerance.
[[nodiscard]] bool is_symmetric_kernel(const MatrixKernel& K, double tol = 1e-10);

/// Pointwise block scaling helpers used by the Riccati driver assembly:
/// left_multiply: out(i,j)  = L(i)·K(i,j)   (no quadrature weight),
/// right_multiply: out(i,j) = K(i,j)·R(j).
[[nodiscard]] MatrixKernel left_multiply(const MatrixField& L, const MatrixKernel& K);
[[nodiscard]] MatrixKernel right_multiply(const MatrixKernel& K, const MatrixField& R);

/// Dense block-diagonal matrix with D(i) on the diagonal.
[[nodiscard]] Eigen::MatrixXd block_diagonal(const MatrixField& D);

}  // namespace mflq
