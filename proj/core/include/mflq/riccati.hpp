#pragma once

#include <string>
#include <vector>

#include "mflq/problem.hpp"

namespace mflq {

enum class Scheme { Euler, RK4 };

/// Parses "euler" / "rk4"; throws ConfigError otherwise.
[[nodiscard]] Scheme parse_scheme(const std::string& name);
[[nodiscard]] std::string scheme_name(Scheme s);

struct SolveOptions {
  Scheme scheme = Scheme::RK4;
  /// Integration aborts with ModelError when any Riccati entry exceeds this.
  double blow_up_cap = 1e6;
};

/// Per-knot diagnostics recorded while integrating backward.
struct RiccatiMonitor {
  std::vector<double> t;
  std::vector<double> op_norm_Kbar;  ///< ‖T_K̄‖ operator norm (power iteration)
  std::vector<double> min_eig_K;     ///< min over labels of min eig K_u
  std::vector<double> min_eig_O;     ///< min over labels of min eig O_u = R_u + D_uᵀK_uD_u
};

/// Backward solution of the triangular Riccati system and the feedback
/// caches the simulator consumes.  Index k is the time knot, k = 0 .. n_steps.
///
/// The quadratic value decomposition at knot k for initial law ξ is
///   𝒱 = ∫ E⟨ξ,K_kξ⟩ du + ∬ ⟨ξ̄,K̄_k ξ̄⟩ du dv + 2∫⟨Y_k,ξ̄⟩ du + ∫ Λ_k du,
/// and the optimal feedback is α̂ = −O⁻¹(U X + T_V X̄ + Γ).
struct RiccatiSolution {
  ProblemSpec spec;
  Scheme scheme = Scheme::RK4;

  std::vector<MatrixField> K;       ///< d×d per label, symmetric
  std::vector<MatrixKernel> Kbar;   ///< d×d blocks, symmetric kernel
  std::vector<VectorField> Y;       ///< d per label
  std::vector<ScalarField> Lambda;  ///< per label

  // feedback caches, one entry per knot
  std::vector<MatrixField> O;       ///< m×m, R + DᵀKD
  std::vector<MatrixField> O_inv;   ///< m×m
  std::vector<MatrixField> U;       ///< m×d, BᵀK + DᵀKC
  std::vector<MatrixKernel> V;      ///< m×d blocks, DᵀKG_C + Bᵀ K̄
  std::vector<VectorField> Gamma;   ///< m, DᵀKγ + BᵀY + R I

  RiccatiMonitor monitor;

  [[nodiscard]] int n_knots() const { return static_cast<int>(K.size()); }
};

/// Integrates the triangular system (K, K̄, Y) backward from the terminal
/// condition with the requested scheme (RK4 stages share the triangular
/// coupling; states are re-symmetrized after every stage), then accumulates Λ
/// with the left-endpoint rectangle rule.  Throws ModelError if coercivity of
/// O is lost along the trajectory or the solution blows up.
[[nodiscard]] RiccatiSolution solve_riccati(const ProblemSpec& spec, const SolveOptions& opts = {});

/// Value 𝒱 at knot `knot` for per-label independent initial conditions with
/// the given conditional mean and covariance (E[ξξᵀ] = cov + mean·meanᵀ).
[[nodiscard]] double value_function(const RiccatiSolution& sol, int knot, const VectorField& mean,
                                    const MatrixField& cov);

/// Value at knot 0 for the spec's own initial law.
[[nodiscard]] double value_function(const RiccatiSolution& sol);

}  // namespace mflq
