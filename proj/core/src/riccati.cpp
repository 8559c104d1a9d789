#include "mflq/riccati.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <utility>

namespace mflq {
namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

[[noreturn]] void model_fail(const char* fmt, double t, double x) {
  char buf[192];
  std::snprintf(buf, sizeof(buf), fmt, t, x);
  throw ModelError(buf);
}

struct KnotCoeffs {
  const MatrixField &A, &B, &C, &D, &Q, &R;
  const VectorField &beta, &gamma, &theta, &I_off;
  const MatrixKernel &G_A, &G_C, &G_Q;
};

KnotCoeffs coeffs_at(const ProblemSpec& s, int k) {
  return KnotCoeffs{s.A.at(k),     s.B.at(k),     s.C.at(k),   s.D.at(k),  s.Q.at(k),
                    s.R.at(k),     s.beta.at(k),  s.gamma.at(k), s.theta.at(k),
                    s.I_off.at(k), s.G_A.at(k),   s.G_C.at(k), s.G_Q.at(k)};
}

/// One point of the backward state: K per label, K̄ dense, Y stacked.
struct TriState {
  std::vector<MatrixXd> K;
  MatrixXd Kbar;
  VectorXd Y;
};

TriState axpy(const TriState& base, double a, const TriState& dir) {
  TriState out;
  out.K.resize(base.K.size());
  for (std::size_t i = 0; i < base.K.size(); ++i) out.K[i] = base.K[i] + a * dir.K[i];
  out.Kbar = base.Kbar + a * dir.Kbar;
  out.Y = base.Y + a * dir.Y;
  return out;
}

void symmetrize(TriState& s) {
  for (auto& K : s.K) K = 0.5 * (K + K.transpose()).eval();
  s.Kbar = 0.5 * (s.Kbar + s.Kbar.transpose()).eval();
}

/// Drivers and feedback quantities at one state.  dK/dt = −Φ̃, dK̄/dt = −F,
/// dY/dt = −F̂ (time runs forward; integration is backward from T).
struct StageEval {
  std::vector<MatrixXd> O, O_inv, U;  // per label: m×m, m×m, m×d
  MatrixXd V;                         // dense (N·m)×(N·d)
  VectorXd Gamma;                     // stacked, N·m
  double min_eig_O = 0.0;
  TriState deriv;
};

StageEval eval_drivers(const TriState& s, const KnotCoeffs& c, const LabelGrid& grid, int d,
                       int m, double coercivity_c, double t) {
  const int n = grid.size();
  const double h = grid.weight();
  StageEval e;
  e.O.resize(static_cast<std::size_t>(n));
  e.O_inv.resize(static_cast<std::size_t>(n));
  e.U.resize(static_cast<std::size_t>(n));
  e.deriv.K.resize(static_cast<std::size_t>(n));
  e.min_eig_O = std::numeric_limits<double>::infinity();

  MatrixField KC{grid, std::vector<MatrixXd>(static_cast<std::size_t>(n))};
  MatrixField CtK{grid, std::vector<MatrixXd>(static_cast<std::size_t>(n))};
  MatrixField DtK{grid, std::vector<MatrixXd>(static_cast<std::size_t>(n))};
  MatrixField UtOinv{grid, std::vector<MatrixXd>(static_cast<std::size_t>(n))};
  MatrixField OinvU{grid, std::vector<MatrixXd>(static_cast<std::size_t>(n))};
  MatrixField Oinv_f{grid, std::vector<MatrixXd>(static_cast<std::size_t>(n))};
  MatrixField K_f{grid, std::vector<MatrixXd>(static_cast<std::size_t>(n))};
  VectorXd Kgamma(static_cast<Eigen::Index>(n) * d);
  VectorXd beta_st(static_cast<Eigen::Index>(n) * d);
  VectorXd OinvGamma(static_cast<Eigen::Index>(n) * m);
  e.Gamma.resize(static_cast<Eigen::Index>(n) * m);
  VectorXd M_point(static_cast<Eigen::Index>(n) * d);

  for (int i = 0; i < n; ++i) {
    const std::size_t ui = static_cast<std::size_t>(i);
    const MatrixXd& K = s.K[ui];
    const MatrixXd& A = c.A[i];
    const MatrixXd& B = c.B[i];
    const MatrixXd& C = c.C[i];
    const MatrixXd& D = c.D[i];
    const VectorXd Yu = s.Y.segment(static_cast<Eigen::Index>(i) * d, d);

    MatrixXd O = c.R[i] + D.transpose() * K * D;
    O = 0.5 * (O + O.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(O, Eigen::EigenvaluesOnly);
    const double lo = es.eigenvalues().minCoeff();
    e.min_eig_O = std::min(e.min_eig_O, lo);
    if (!(lo >= 0.5 * coercivity_c))
      model_fail("riccati: coercivity of O lost along the trajectory (t = %g, min eig = %g)", t,
                 lo);
    MatrixXd Oinv = O.llt().solve(MatrixXd::Identity(m, m));
    MatrixXd U = B.transpose() * K + D.transpose() * K * C;

    e.deriv.K[ui] = -(A.transpose() * K + K * A + C.transpose() * K * C + c.Q[i] -
                      U.transpose() * Oinv * U);

    KC[i] = K * C;
    CtK[i] = C.transpose() * K;
    DtK[i] = D.transpose() * K;
    UtOinv[i] = U.transpose() * Oinv;
    OinvU[i] = Oinv * U;
    Oinv_f[i] = Oinv;
    K_f[i] = K;
    Kgamma.segment(static_cast<Eigen::Index>(i) * d, d) = K * c.gamma[i];
    beta_st.segment(static_cast<Eigen::Index>(i) * d, d) = c.beta[i];
    const VectorXd G = DtK[i] * c.gamma[i] + B.transpose() * Yu + c.R[i] * c.I_off[i];
    e.Gamma.segment(static_cast<Eigen::Index>(i) * m, m) = G;
    OinvGamma.segment(static_cast<Eigen::Index>(i) * m, m) = Oinv * G;
    M_point.segment(static_cast<Eigen::Index>(i) * d, d) =
        K * c.beta[i] + C.transpose() * Kgamma.segment(static_cast<Eigen::Index>(i) * d, d) +
        A.transpose() * Yu - UtOinv[i] * G;

    e.O[ui] = std::move(O);
    e.O_inv[ui] = Oinv_f[i];
    e.U[ui] = std::move(U);
  }

  const MatrixXd& GdA = c.G_A.dense();
  const MatrixXd& GdC = c.G_C.dense();
  const MatrixXd bdK = block_diagonal(K_f);
  const MatrixXd bdCtK = block_diagonal(CtK);
  const MatrixXd bdKC = block_diagonal(KC);

  // Ψ = KG_A + G_A*K + CᵀKG_C + G_C*KC + (G_C*∘K∘G_C)
  //     + Aᵀk̄ + (G_A*∘k̄) + k̄*A + (k̄*∘G_A) + G_Q
  MatrixXd Psi = bdK * GdA;
  Psi += GdA.transpose() * bdK;
  Psi += bdCtK * GdC;
  Psi += GdC.transpose() * bdKC;
  Psi += h * (GdC.transpose() * (bdK * GdC));
  {
    MatrixField At{grid, std::vector<MatrixXd>(static_cast<std::size_t>(n))};
    MatrixField A_only{grid, std::vector<MatrixXd>(static_cast<std::size_t>(n))};
    for (int i = 0; i < n; ++i) {
      At[i] = c.A[i].transpose();
      A_only[i] = c.A[i];
    }
    Psi += block_diagonal(At) * s.Kbar;
    Psi += s.Kbar.transpose() * block_diagonal(A_only);
  }
  Psi += h * (GdA.transpose() * s.Kbar);
  Psi += h * (s.Kbar.transpose() * GdA);
  Psi += c.G_Q.dense();

  // V = DᵀKG_C + Bᵀk̄
  MatrixField Bt{grid, std::vector<MatrixXd>(static_cast<std::size_t>(n))};
  for (int i = 0; i < n; ++i) Bt[i] = c.B[i].transpose();
  e.V = block_diagonal(DtK) * GdC + block_diagonal(Bt) * s.Kbar;

  // F = Ψ − UᵀO⁻¹V − V*O⁻¹U − (V*∘O⁻¹∘V)
  MatrixXd F = Psi;
  F -= block_diagonal(UtOinv) * e.V;
  F -= e.V.transpose() * block_diagonal(OinvU);
  F -= h * (e.V.transpose() * (block_diagonal(Oinv_f) * e.V));
  e.deriv.Kbar = -F;

  // F̂ = Kβ + CᵀKγ + AᵀY − UᵀO⁻¹Γ  (pointwise, already in M_point)
  //     + T_{G_C*}(Kγ) + T_K̄(β) + T_{G_A*}(Y) − T_{V*}(O⁻¹Γ)
  VectorXd Fhat = M_point;
  Fhat += h * (GdC.transpose() * Kgamma);
  Fhat += h * (s.Kbar * beta_st);
  Fhat += h * (GdA.transpose() * s.Y);
  Fhat -= h * (e.V.transpose() * OinvGamma);
  e.deriv.Y = -Fhat;
  return e;
}

void check_state(const TriState& s, double cap, double t) {
  double peak = s.Kbar.cwiseAbs().maxCoeff();
  for (const auto& K : s.K) peak = std::max(peak, K.cwiseAbs().maxCoeff());
  peak = std::max(peak, s.Y.cwiseAbs().maxCoeff());
  if (!std::isfinite(peak))
    model_fail("riccati: non-finite state while integrating backward (t = %g, peak = %g)", t,
               peak);
  if (peak > cap)
    model_fail("riccati: blow-up while integrating backward (t = %g, peak = %g)", t, peak);
}

}  // namespace

Scheme parse_scheme(const std::string& name) {
  if (name == "euler") return Scheme::Euler;
  if (name == "rk4") return Scheme::RK4;
  throw ConfigError("unknown scheme '" + name + "' (use euler or rk4)");
}

std::string scheme_name(Scheme s) { return s == Scheme::Euler ? "euler" : "rk4"; }

RiccatiSolution solve_riccati(const ProblemSpec& spec, const SolveOptions& opts) {
  validate(spec);
  const LabelGrid& g = spec.grid;
  const TimeGrid& tg = spec.tgrid;
  const int n = g.size(), d = spec.d, m = spec.m;
  const int n_knots = tg.n_knots();
  const double dt = tg.dt();

  std::vector<TriState> states(static_cast<std::size_t>(n_knots));
  TriState terminal;
  terminal.K.assign(spec.H.values.begin(), spec.H.values.end());
  terminal.Kbar = spec.G_H.dense();
  terminal.Y = VectorXd::Zero(static_cast<Eigen::Index>(n) * d);
  states[static_cast<std::size_t>(n_knots - 1)] = std::move(terminal);

  const auto eval = [&](const TriState& s, const KnotCoeffs& c, double t) {
    return eval_drivers(s, c, g, d, m, spec.coercivity_c, t);
  };

  for (int k = n_knots - 2; k >= 0; --k) {
    const KnotCoeffs c = coeffs_at(spec, k);
    const TriState& s1 = states[static_cast<std::size_t>(k + 1)];
    const double tk = tg.time(k);
    TriState next;
    if (opts.scheme == Scheme::Euler) {
      StageEval e1 = eval(s1, c, tk);
      next = axpy(s1, -dt, e1.deriv);
    } else {
      StageEval e1 = eval(s1, c, tk);
      TriState s2 = axpy(s1, -0.5 * dt, e1.deriv);
      symmetrize(s2);
      StageEval e2 = eval(s2, c, tk);
      TriState s3 = axpy(s1, -0.5 * dt, e2.deriv);
      symmetrize(s3);
      StageEval e3 = eval(s3, c, tk);
      TriState s4 = axpy(s1, -dt, e3.deriv);
      symmetrize(s4);
      StageEval e4 = eval(s4, c, tk);
      next = axpy(s1, -dt / 6.0, e1.deriv);
      next = axpy(next, -dt / 3.0, e2.deriv);
      next = axpy(next, -dt / 3.0, e3.deriv);
      next = axpy(next, -dt / 6.0, e4.deriv);
    }
    symmetrize(next);
    check_state(next, opts.blow_up_cap, tk);
    states[static_cast<std::size_t>(k)] = std::move(next);
  }

  RiccatiSolution sol;
  sol.spec = spec;
  sol.scheme = opts.scheme;
  sol.K.resize(static_cast<std::size_t>(n_knots));
  sol.Kbar.reserve(static_cast<std::size_t>(n_knots));
  sol.Y.resize(static_cast<std::size_t>(n_knots));
  sol.Lambda.resize(static_cast<std::size_t>(n_knots));
  sol.O.resize(static_cast<std::size_t>(n_knots));
  sol.O_inv.resize(static_cast<std::size_t>(n_knots));
  sol.U.resize(static_cast<std::size_t>(n_knots));
  sol.V.reserve(static_cast<std::size_t>(n_knots));
  sol.Gamma.resize(static_cast<std::size_t>(n_knots));
  sol.monitor.t.resize(static_cast<std::size_t>(n_knots));
  sol.monitor.op_norm_Kbar.resize(static_cast<std::size_t>(n_knots));
  sol.monitor.min_eig_K.resize(static_cast<std::size_t>(n_knots));
  sol.monitor.min_eig_O.resize(static_cast<std::size_t>(n_knots));

  // Feedback caches, monitors and Λ from the stored knot states.
  std::vector<ScalarField> Ltilde(static_cast<std::size_t>(n_knots));
  VectorXd warm;  // power-iteration warm start carried along the trajectory
  for (int k = n_knots - 1; k >= 0; --k) {
    const std::size_t ks = static_cast<std::size_t>(k);
    const KnotCoeffs c = coeffs_at(spec, k);
    const TriState& s = states[ks];
    StageEval e = eval(s, c, tg.time(k));

    sol.K[ks] = MatrixField{g, s.K};
    sol.Kbar.push_back(MatrixKernel::FromDense(g, d, d, s.Kbar));
    sol.Y[ks] = unstack(g, d, s.Y);
    sol.O[ks] = MatrixField{g, e.O};
    sol.O_inv[ks] = MatrixField{g, e.O_inv};
    sol.U[ks] = MatrixField{g, e.U};
    sol.V.push_back(MatrixKernel::FromDense(g, m, d, e.V));
    sol.Gamma[ks] = unstack(g, m, e.Gamma);

    sol.monitor.t[ks] = tg.time(k);
    sol.monitor.min_eig_O[ks] = e.min_eig_O;
    double min_eig_K = std::numeric_limits<double>::infinity();
    for (const auto& K : s.K) {
      Eigen::SelfAdjointEigenSolver<MatrixXd> es(K, Eigen::EigenvaluesOnly);
      min_eig_K = std::min(min_eig_K, es.eigenvalues().minCoeff());
    }
    sol.monitor.min_eig_K[ks] = min_eig_K;
    sol.monitor.op_norm_Kbar[ks] = operator_norm(sol.Kbar.back(), 10000, 1e-12, &warm).value;

    // Running constant:  L̃ = γᵀKγ + θᵀKθ + 2βᵀY + ⟨θ, T_K̄ θ⟩ + IᵀRI − ΓᵀO⁻¹Γ
    ScalarField lt{g, std::vector<double>(static_cast<std::size_t>(n), 0.0)};
    VectorXd theta_st(static_cast<Eigen::Index>(n) * d);
    for (int i = 0; i < n; ++i)
      theta_st.segment(static_cast<Eigen::Index>(i) * d, d) = c.theta[i];
    const VectorXd Ktheta_bar = g.weight() * (s.Kbar * theta_st);
    for (int i = 0; i < n; ++i) {
      const std::size_t ui = static_cast<std::size_t>(i);
      const VectorXd Yu = s.Y.segment(static_cast<Eigen::Index>(i) * d, d);
      const VectorXd Gu = e.Gamma.segment(static_cast<Eigen::Index>(i) * m, m);
      double L = c.gamma[i].dot(s.K[ui] * c.gamma[i]) + c.theta[i].dot(s.K[ui] * c.theta[i]) +
                 2.0 * c.beta[i].dot(Yu) +
                 c.theta[i].dot(Ktheta_bar.segment(static_cast<Eigen::Index>(i) * d, d)) +
                 c.I_off[i].dot(c.R[i] * c.I_off[i]);
      lt[i] = L - Gu.dot(e.O_inv[ui] * Gu);
    }
    Ltilde[ks] = std::move(lt);
  }
  std::reverse(sol.Kbar.begin(), sol.Kbar.end());
  std::reverse(sol.V.begin(), sol.V.end());

  // Λ backward with the left-endpoint rectangle rule (matches the
  // simulator's running-cost accumulation).
  sol.Lambda[static_cast<std::size_t>(n_knots - 1)] =
      ScalarField::Constant(g, 0.0);
  for (int k = n_knots - 2; k >= 0; --k) {
    const std::size_t ks = static_cast<std::size_t>(k);
    ScalarField cur{g, std::vector<double>(static_cast<std::size_t>(n), 0.0)};
    for (int i = 0; i < n; ++i) cur[i] = sol.Lambda[ks + 1][i] + dt * Ltilde[ks][i];
    sol.Lambda[ks] = std::move(cur);
  }
  return sol;
}

double value_function(const RiccatiSolution& sol, int knot, const VectorField& mean,
                      const MatrixField& cov) {
  if (knot < 0 || knot >= sol.n_knots()) throw std::invalid_argument("value_function: bad knot");
  const LabelGrid& g = sol.spec.grid;
  if (mean.grid != g || cov.grid != g)
    throw std::invalid_argument("value_function: grid mismatch");
  const double h = g.weight();
  const std::size_t ks = static_cast<std::size_t>(knot);

  double quad = 0.0, lin = 0.0, cons = 0.0;
  for (int i = 0; i < g.size(); ++i) {
    const Eigen::MatrixXd& K = sol.K[ks][i];
    quad += h * (mean[i].dot(K * mean[i]) + (K * cov[i]).trace());
    lin += 2.0 * h * sol.Y[ks][i].dot(mean[i]);
    cons += h * sol.Lambda[ks][i];
  }
  const VectorXd xbar = stack(mean);
  const double mixed = h * h * xbar.dot(sol.Kbar[ks].dense() * xbar);
  return quad + mixed + lin + cons;
}

double value_function(const RiccatiSolution& sol) {
  return value_function(sol, 0, sol.spec.xi_mean, sol.spec.xi_cov);
}

}  // namespace mflq
