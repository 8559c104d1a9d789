#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mflq/riccati.hpp"

namespace mflq {

/// Control policy for the particle simulator.
///
/// Feedback plays α̂ = −O⁻¹(U X + T_V X̄ + Γ).  PerturbedFeedback plays
/// α̂ + ε δ(t,u) for a deterministic direction δ.  OpenLoop plays a
/// deterministic α(t,u).  The conditional mean X̄ is propagated alongside the
/// particles with the policy's own mean dynamics, driven by the same common
/// noise, so it equals the conditional expectation of the discrete system
/// exactly.
struct Policy {
  enum class Kind { Feedback, PerturbedFeedback, OpenLoop };
  Kind kind = Kind::Feedback;
  double eps = 0.0;
  TimePath<VectorField> delta;  ///< m per label (PerturbedFeedback)
  TimePath<VectorField> alpha;  ///< m per label (OpenLoop)

  static Policy Feedback() { return {}; }
  static Policy Perturbed(double eps, TimePath<VectorField> delta) {
    Policy p;
    p.kind = Kind::PerturbedFeedback;
    p.eps = eps;
    p.delta = std::move(delta);
    return p;
  }
  static Policy OpenLoop(TimePath<VectorField> alpha) {
    Policy p;
    p.kind = Kind::OpenLoop;
    p.alpha = std::move(alpha);
    return p;
  }
};

struct SimOptions {
  int n_common = 100;  ///< outer Monte-Carlo size (common-noise paths)
  int n_idio = 10;     ///< particles per label within one common path
  std::uint64_t seed = 0;
  int threads = 1;  ///< worker threads over common paths; results are
                    ///< bit-identical for any value
};

struct CostEstimate {
  double mean = 0.0;
  double std_error = 0.0;  ///< SD of per-common-path costs / sqrt(n_common)
  int n_samples = 0;       ///< n_common
};

/// Costs of several policies evaluated in lockstep on shared noise (common
/// increments, idiosyncratic increments and initial draws are identical
/// across policies), so differences of per-common costs are low-variance.
struct LockstepCosts {
  std::vector<CostEstimate> cost;               ///< per policy
  std::vector<std::vector<double>> per_common;  ///< [policy][common path]
};

/// Simulates all policies over the same noise and returns per-common-path
/// cost functionals J_c = (1/n_idio) Σ_j [particle costs] + [mean-field
/// costs].  Running costs use the left-endpoint rectangle rule on the knot
/// grid; the terminal cost is evaluated at the last knot.
[[nodiscard]] LockstepCosts simulate_costs(const RiccatiSolution& sol,
                                           const std::vector<Policy>& policies,
                                           const SimOptions& opt);

/// ε² Σ_k dt Σ_u h ⟨δ_u, O_k(u) δ_u⟩ over knots k = 0..n_steps−1: the exact
/// quadratic penalty the fundamental relation predicts for playing α̂ + εδ.
[[nodiscard]] double perturbation_penalty(const RiccatiSolution& sol,
                                          const TimePath<VectorField>& delta, double eps);

/// Monte-Carlo check of the fundamental relation around the synthesized
/// feedback, all from one lockstep run on policies {α̂, α̂+εδ, α̂−εδ}:
///   residual_a = Ĵ(α̂) − 𝒱
///   residual_b = [Ĵ(α̂+εδ) − Ĵ(α̂)] − ε²∫∫⟨δ,Oδ⟩
///   residual_c = [Ĵ(α̂+εδ) − Ĵ(α̂−εδ)] / (2ε)   (centered linear term)
/// Standard errors of b and c come from the per-common-path difference
/// vectors (CRN), not from the marginal cost spreads.
struct FundamentalRelationReport {
  double J_hat = 0.0;       ///< Ĵ(α̂)
  double V = 0.0;           ///< 𝒱 from the Riccati decomposition at knot 0
  double penalty = 0.0;     ///< ε²∫∫⟨δ,Oδ⟩
  double residual_a = 0.0, se_a = 0.0;
  double residual_b = 0.0, se_b = 0.0;
  double residual_c = 0.0, se_c = 0.0;
  double eps = 0.0;
  int n_common = 0, n_idio = 0;
};

[[nodiscard]] FundamentalRelationReport fundamental_relation(const RiccatiSolution& sol,
                                                             double eps,
                                                             const TimePath<VectorField>& delta,
                                                             const SimOptions& opt);

/// Same with δ ≡ (1,...,1) in every control component.
[[nodiscard]] FundamentalRelationReport fundamental_relation(const RiccatiSolution& sol,
                                                             double eps, const SimOptions& opt);

/// Cross-path statistics of the simulated ensemble at a decimated set of
/// knots (at most max_knots, evenly strided, always including t0 and T):
/// mean and 5% / 95% quantiles of the first state and control components,
/// pooled over all n_common·n_idio particles.
struct EnsembleStats {
  std::vector<int> knots;
  std::vector<double> t;
  /// [selected knot][label]
  std::vector<std::vector<double>> x_mean, x_q05, x_q95;
  std::vector<std::vector<double>> a_mean, a_q05, a_q95;
};

[[nodiscard]] EnsembleStats simulate_ensemble(const RiccatiSolution& sol, const Policy& policy,
                                              const SimOptions& opt, int max_knots = 101);

/// Nested Monte-Carlo check that the propagated conditional mean matches the
/// within-common-path particle average: one common path, n_idio particles,
/// feedback policy.  Per knot k the statistic is the label-integrated signed
/// deviation  dev_k = h Σ_u Σ_comp (X̂̄ − X̄_prop)  together with the standard
/// error of the matching per-particle functional.
struct ConditionalMeanCheck {
  std::vector<double> t;
  std::vector<double> deviation;
  std::vector<double> std_error;
  double max_abs_z = 0.0;  ///< max over knots of |deviation| / std_error
  int n_idio = 0;
};

[[nodiscard]] ConditionalMeanCheck nested_conditional_mean(const RiccatiSolution& sol, int n_idio,
                                                           std::uint64_t seed);

}  // namespace mflq
