#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "mflq/graphon.hpp"
#include "mflq/grid.hpp"
#include "mflq/kernel.hpp"

namespace mflq {

/// Numerical / model failure (validation, coercivity loss, blow-up, NaN).
/// The CLI maps this to exit code 1.
struct ModelError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Usage / IO failure (missing file, malformed config).  CLI exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Deterministic coefficient path on a TimeGrid: either a single value
/// (time-constant) or one value per knot, read back piecewise-constant in
/// time — the value on interval [t_k, t_{k+1}) is the knot-k value.
template <class T>
class TimePath {
 public:
  TimePath() = default;
  explicit TimePath(T constant) { knots_.push_back(std::move(constant)); }

  static TimePath Knots(std::vector<T> knots) {
    if (knots.empty()) throw std::invalid_argument("TimePath: empty knot list");
    TimePath p;
    p.knots_ = std::move(knots);
    return p;
  }

  [[nodiscard]] bool is_constant() const { return knots_.size() == 1; }
  [[nodiscard]] int n_knots() const { return static_cast<int>(knots_.size()); }
  [[nodiscard]] const T& at(int knot) const {
    return knots_.size() == 1 ? knots_.front() : knots_[static_cast<std::size_t>(knot)];
  }

 private:
  std::vector<T> knots_;
};

/// Full coefficient set of the LQ problem
///
///   dX^u = [β + A X^u + T_{G_A} X̄ + B α] dt + [γ + C X^u + T_{G_C} X̄ + D α] dW^u + θ dB̃⁰
///   J    = ∫ E[ ∫ ⟨X,QX⟩ + ⟨X̄, T_{G_Q} X̄⟩ + ⟨α+I, R(α+I)⟩ ds
///               + ⟨X_T,HX_T⟩ + ⟨X̄_T, T_{G_H} X̄_T⟩ ] du
///
/// on a label grid and a time grid, with per-label initial mean/covariance.
/// All coefficients are deterministic; time dependence is piecewise constant
/// on the knots.
struct ProblemSpec {
  std::string name;

  LabelGrid grid;
  TimeGrid tgrid;
  int d = 1;  ///< state dimension
  int m = 1;  ///< control dimension

  // drift
  TimePath<MatrixField> A;       // d×d
  TimePath<MatrixField> B;       // d×m
  TimePath<VectorField> beta;    // d
  TimePath<MatrixKernel> G_A;    // d×d blocks

  // diffusion (scalar idiosyncratic and common noises)
  TimePath<MatrixField> C;       // d×d
  TimePath<MatrixField> D;       // d×m
  TimePath<VectorField> gamma;   // d
  TimePath<MatrixKernel> G_C;    // d×d blocks
  TimePath<VectorField> theta;   // d, common-noise loading

  // running cost
  TimePath<MatrixField> Q;       // d×d
  TimePath<MatrixKernel> G_Q;    // d×d blocks
  TimePath<MatrixField> R;       // m×m
  TimePath<VectorField> I_off;   // m, control offset

  // terminal cost
  MatrixField H;                 // d×d
  MatrixKernel G_H;              // d×d blocks

  // initial condition: per-label independent Gaussians N(mean, cov)
  VectorField xi_mean;           // d
  MatrixField xi_cov;            // d×d

  /// Declared coercivity constant: validation requires min eig R ≥ c > 0.
  double coercivity_c = 1e-9;

  /// All-zero coefficients (R = identity so the spec validates).
  static ProblemSpec Zero(const LabelGrid& grid, const TimeGrid& tgrid, int d, int m);
};

/// Result of validate(): assembled-operator minimum eigenvalues.  A negative
/// value here is a warning (the underlying condition is on conditional laws,
/// which is weaker); R-coercivity and symmetry violations throw instead.
struct PositivityReport {
  double min_eig_Q_plus_GQ = 0.0;  ///< min over knots of min eig of M_Q + T_{G_Q}
  double min_eig_H_plus_GH = 0.0;
  double min_eig_R = 0.0;          ///< min over knots and labels
  std::string note;
};

/// Checks every ProblemSpec invariant (shapes, finiteness, Q/H symmetric PSD,
/// G_Q/G_H symmetric, R coercive) and computes the assembled-operator
/// positivity report.  Hard violations throw ModelError; pure positivity of
/// the assembled operators is reported, not fatal.  Idempotent, no side
/// effects.
PositivityReport validate(const ProblemSpec& spec);

/// Kernel of the centered cost  Σ_u h (x_u − (T_Ĝ x)_u)ᵀ W_u (x_u − (T_Ĝ x)_u):
///
///   G(u,v) = (Ĝ ∘ W ∘ Ĝ)(u,v) − W_u Ĝ(u,v) − Ĝ(u,v) W_v,
///
/// so the assembled operator M_W + T_G is PSD by construction.  Requires Ĝ
/// symmetric and W_u symmetric PSD.
[[nodiscard]] MatrixKernel centered_transform(const MatrixKernel& G_hat, const MatrixField& W);

/// Per-label independent Gaussian draws ξ^u ~ N(ξ_mean[u], ξ_cov[u]);
/// deterministic in (seed, sample index, label, component).
[[nodiscard]] std::vector<VectorField> build_initial_condition(const ProblemSpec& spec,
                                                               int n_samples,
                                                               std::uint64_t rng_seed);

/// Problem definition from a JSON config file (sections: grid, time, dims,
/// drift, diffusion, cost, terminal, initial).  Graphons are named built-ins
/// with parameters, a centered transform of a built-in, or a CSV path
/// (resolved relative to the config file).  Throws ConfigError on malformed
/// input.
[[nodiscard]] ProblemSpec load_problem(const std::string& path);

/// Same, from JSON text; `base_dir` resolves relative CSV paths.
[[nodiscard]] ProblemSpec parse_problem(const std::string& json_text,
                                        const std::string& base_dir = ".");

}  // namespace mflq
