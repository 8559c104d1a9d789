#include "mflq/simulate.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <exception>
#include <thread>
#include <utility>

#include "mflq/rng.hpp"

namespace mflq {
namespace {

using Eigen::ArrayXd;
using Eigen::ArrayXXd;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Shared per-knot precomputation.  The feedback map α̂ = −O⁻¹(UX + T_V X̄ + Γ)
/// is split into a state gain Gs = −O⁻¹U, a mean map W1 = −h·BD(O⁻¹)·V and a
/// constant aff0 = −BD(O⁻¹)·Γ; the particle drift/volatility then read
///   drift_u = Aeff_u X_u + (DA·X̄ + mean_b)_u,   Aeff = A + B·Gs,
///   vol_u   = Ceff_u X_u + (DV·X̄ + vol_c)_u,    Ceff = C + D·Gs,
/// with DA = h·G_A + BD(B)·W1 and DV = h·G_C + BD(D)·W1, and the closed-loop
/// conditional mean follows X̄⁺ = X̄ + dt(Mbar·X̄ + mean_b) + θ·ΔB⁰ with
/// Mbar = BD(Aeff) + DA, so it is the exact conditional expectation of the
/// Euler particle system.
struct MatrixSet {
  // [knot]
  std::vector<MatrixXd> W1, DA, DV, Mbar;
  std::vector<VectorXd> aff0, da0, dv0;
  // [knot][label]
  std::vector<std::vector<MatrixXd>> Aeff, Ceff, Gs;
  // flattened scalar-case views, built when d == m == 1
  std::vector<ArrayXd> aeff1, ceff1, gs1;
};

struct Precomp {
  const RiccatiSolution* sol = nullptr;
  int n = 0, d = 1, m = 1, n_steps = 0, n_knots = 0;
  double h = 0.0, dt = 0.0, sqdt = 0.0;
  bool scalar = false;  // d == m == 1 fast path

  MatrixSet fb;                 // feedback kinds
  std::unique_ptr<MatrixSet> ol;  // open loop, built on demand

  std::vector<VectorXd> theta_st;  // [knot]
  std::vector<ArrayXd> theta1;     // scalar case

  // cost weights
  std::vector<ArrayXd> q1, r1, i1;  // [knot], scalar case
  ArrayXd h1;
  std::vector<const MatrixXd*> GdQ;  // [knot]
  const MatrixXd* GdH = nullptr;

  // initial condition
  VectorXd mean_st;
  std::vector<MatrixXd> init_factor;  // per label, PSD sqrt of cov
  std::vector<double> init_factor1;   // scalar case
};

struct KnotCoeffs {
  const MatrixField &A, &B, &C, &D, &Q, &R;
  const VectorField &beta, &gamma, &theta, &I_off;
};

KnotCoeffs coeffs_at(const ProblemSpec& s, int k) {
  return KnotCoeffs{s.A.at(k),    s.B.at(k),     s.C.at(k),     s.D.at(k),  s.Q.at(k),
                    s.R.at(k),    s.beta.at(k),  s.gamma.at(k), s.theta.at(k),
                    s.I_off.at(k)};
}

VectorXd stack_field(const VectorField& f) { return stack(f); }

MatrixSet build_feedback_set(const RiccatiSolution& sol) {
  const ProblemSpec& spec = sol.spec;
  const LabelGrid& g = spec.grid;
  const int n = g.size(), d = spec.d, m = spec.m;
  const int n_knots = sol.n_knots();
  const double h = g.weight();
  MatrixSet S;
  S.W1.resize(n_knots);
  S.DA.resize(n_knots);
  S.DV.resize(n_knots);
  S.Mbar.resize(n_knots);
  S.aff0.resize(n_knots);
  S.da0.resize(n_knots);
  S.dv0.resize(n_knots);
  S.Aeff.resize(n_knots);
  S.Ceff.resize(n_knots);
  S.Gs.resize(n_knots);
  const bool scalar = (d == 1 && m == 1);
  if (scalar) {
    S.aeff1.resize(n_knots);
    S.ceff1.resize(n_knots);
    S.gs1.resize(n_knots);
  }
  for (int k = 0; k < n_knots; ++k) {
    const KnotCoeffs c = coeffs_at(spec, k);
    const MatrixXd& Vd = sol.V[static_cast<std::size_t>(k)].dense();
    const MatrixField& Oinv = sol.O_inv[static_cast<std::size_t>(k)];
    const MatrixField& U = sol.U[static_cast<std::size_t>(k)];
    const VectorXd Gamma_st = stack_field(sol.Gamma[static_cast<std::size_t>(k)]);

    MatrixField negOinv{g, std::vector<MatrixXd>(static_cast<std::size_t>(n))};
    std::vector<MatrixXd>& Gs = S.Gs[static_cast<std::size_t>(k)];
    std::vector<MatrixXd>& Aeff = S.Aeff[static_cast<std::size_t>(k)];
    std::vector<MatrixXd>& Ceff = S.Ceff[static_cast<std::size_t>(k)];
    Gs.resize(static_cast<std::size_t>(n));
    Aeff.resize(static_cast<std::size_t>(n));
    Ceff.resize(static_cast<std::size_t>(n));
    VectorXd aff0(static_cast<Eigen::Index>(n) * m);
    for (int i = 0; i < n; ++i) {
      const std::size_t ui = static_cast<std::size_t>(i);
      negOinv[i] = -Oinv[i];
      Gs[ui] = negOinv[i] * U[i];
      Aeff[ui] = c.A[i] + c.B[i] * Gs[ui];
      Ceff[ui] = c.C[i] + c.D[i] * Gs[ui];
      aff0.segment(static_cast<Eigen::Index>(i) * m, m) =
          negOinv[i] * Gamma_st.segment(static_cast<Eigen::Index>(i) * m, m);
    }
    const MatrixXd bdNegOinv = block_diagonal(negOinv);
    MatrixField Bf{g, std::vector<MatrixXd>(c.B.values.begin(), c.B.values.end())};
    MatrixField Df{g, std::vector<MatrixXd>(c.D.values.begin(), c.D.values.end())};
    const MatrixXd bdB = block_diagonal(Bf);
    const MatrixXd bdD = block_diagonal(Df);

    S.W1[k] = h * (bdNegOinv * Vd);
    S.aff0[k] = std::move(aff0);
    S.DA[k] = h * spec.G_A.at(k).dense() + bdB * S.W1[k];
    S.DV[k] = h * spec.G_C.at(k).dense() + bdD * S.W1[k];
    S.da0[k] = stack_field(c.beta) + bdB * S.aff0[k];
    S.dv0[k] = stack_field(c.gamma) + bdD * S.aff0[k];
    MatrixField AeffF{g, Aeff};
    S.Mbar[k] = block_diagonal(AeffF) + S.DA[k];
    if (scalar) {
      S.aeff1[k] = ArrayXd(n);
      S.ceff1[k] = ArrayXd(n);
      S.gs1[k] = ArrayXd(n);
      for (int i = 0; i < n; ++i) {
        S.aeff1[k][i] = Aeff[static_cast<std::size_t>(i)](0, 0);
        S.ceff1[k][i] = Ceff[static_cast<std::size_t>(i)](0, 0);
        S.gs1[k][i] = Gs[static_cast<std::size_t>(i)](0, 0);
      }
    }
  }
  return S;
}

MatrixSet build_openloop_set(const RiccatiSolution& sol) {
  const ProblemSpec& spec = sol.spec;
  const LabelGrid& g = spec.grid;
  const int n = g.size(), d = spec.d, m = spec.m;
  const int n_knots = sol.n_knots();
  const double h = g.weight();
  MatrixSet S;
  S.W1.assign(n_knots, MatrixXd());  // empty: no mean term in the control
  S.DA.resize(n_knots);
  S.DV.resize(n_knots);
  S.Mbar.resize(n_knots);
  S.aff0.assign(n_knots, VectorXd::Zero(static_cast<Eigen::Index>(n) * m));
  S.da0.resize(n_knots);
  S.dv0.resize(n_knots);
  S.Aeff.resize(n_knots);
  S.Ceff.resize(n_knots);
  S.Gs.resize(n_knots);
  const bool scalar = (d == 1 && m == 1);
  if (scalar) {
    S.aeff1.resize(n_knots);
    S.ceff1.resize(n_knots);
    S.gs1.resize(n_knots);
  }
  for (int k = 0; k < n_knots; ++k) {
    const KnotCoeffs c = coeffs_at(spec, k);
    S.Aeff[k].assign(c.A.values.begin(), c.A.values.end());
    S.Ceff[k].assign(c.C.values.begin(), c.C.values.end());
    S.Gs[k].assign(static_cast<std::size_t>(n), MatrixXd::Zero(m, d));
    S.DA[k] = h * spec.G_A.at(k).dense();
    S.DV[k] = h * spec.G_C.at(k).dense();
    S.da0[k] = stack_field(c.beta);
    S.dv0[k] = stack_field(c.gamma);
    MatrixField Af{g, std::vector<MatrixXd>(c.A.values.begin(), c.A.values.end())};
    S.Mbar[k] = block_diagonal(Af) + S.DA[k];
    if (scalar) {
      S.aeff1[k] = ArrayXd(n);
      S.ceff1[k] = ArrayXd(n);
      S.gs1[k] = ArrayXd::Zero(n);
      for (int i = 0; i < n; ++i) {
        S.aeff1[k][i] = c.A[i](0, 0);
        S.ceff1[k][i] = c.C[i](0, 0);
      }
    }
  }
  return S;
}

Precomp build_precomp(const RiccatiSolution& sol) {
  const ProblemSpec& spec = sol.spec;
  const LabelGrid& g = spec.grid;
  Precomp P;
  P.sol = &sol;
  P.n = g.size();
  P.d = spec.d;
  P.m = spec.m;
  P.n_steps = spec.tgrid.n_steps();
  P.n_knots = sol.n_knots();
  P.h = g.weight();
  P.dt = spec.tgrid.dt();
  P.sqdt = std::sqrt(P.dt);
  P.scalar = (P.d == 1 && P.m == 1);
  P.fb = build_feedback_set(sol);

  P.theta_st.resize(P.n_knots);
  P.GdQ.resize(P.n_knots);
  if (P.scalar) {
    P.theta1.resize(P.n_knots);
    P.q1.resize(P.n_knots);
    P.r1.resize(P.n_knots);
    P.i1.resize(P.n_knots);
  }
  for (int k = 0; k < P.n_knots; ++k) {
    const KnotCoeffs c = coeffs_at(spec, k);
    P.theta_st[k] = stack_field(c.theta);
    P.GdQ[k] = &spec.G_Q.at(k).dense();
    if (P.scalar) {
      P.theta1[k] = ArrayXd(P.n);
      P.q1[k] = ArrayXd(P.n);
      P.r1[k] = ArrayXd(P.n);
      P.i1[k] = ArrayXd(P.n);
      for (int i = 0; i < P.n; ++i) {
        P.theta1[k][i] = c.theta[i][0];
        P.q1[k][i] = c.Q[i](0, 0);
        P.r1[k][i] = c.R[i](0, 0);
        P.i1[k][i] = c.I_off[i][0];
      }
    }
  }
  P.GdH = &spec.G_H.dense();
  if (P.scalar) {
    P.h1 = ArrayXd(P.n);
    for (int i = 0; i < P.n; ++i) P.h1[i] = spec.H[i](0, 0);
  }

  P.mean_st = stack_field(spec.xi_mean);
  P.init_factor.resize(static_cast<std::size_t>(P.n));
  if (P.scalar) P.init_factor1.resize(static_cast<std::size_t>(P.n));
  for (int i = 0; i < P.n; ++i) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(spec.xi_cov[i]);
    P.init_factor[static_cast<std::size_t>(i)] =
        es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
        es.eigenvectors().transpose();
    if (P.scalar)
      P.init_factor1[static_cast<std::size_t>(i)] =
          P.init_factor[static_cast<std::size_t>(i)](0, 0);
  }
  return P;
}

/// Per-policy affine pieces on top of a MatrixSet.
struct PolicyRuntime {
  const MatrixSet* S = nullptr;
  std::vector<VectorXd> ctrl;       // [knot] N·m (εδ, α, or zero)
  std::vector<VectorXd> alpha_aff;  // [knot] aff0 + ctrl
  std::vector<VectorXd> mean_b;     // [knot] da0 + BD(B)·ctrl
  std::vector<VectorXd> vol_c;      // [knot] dv0 + BD(D)·ctrl
};

PolicyRuntime build_policy_runtime(const Precomp& P, const MatrixSet& S, const Policy& pol) {
  const ProblemSpec& spec = P.sol->spec;
  const LabelGrid& g = spec.grid;
  PolicyRuntime R;
  R.S = &S;
  R.ctrl.resize(P.n_knots);
  R.alpha_aff.resize(P.n_knots);
  R.mean_b.resize(P.n_knots);
  R.vol_c.resize(P.n_knots);
  for (int k = 0; k < P.n_knots; ++k) {
    VectorXd ctrl = VectorXd::Zero(static_cast<Eigen::Index>(P.n) * P.m);
    if (pol.kind == Policy::Kind::PerturbedFeedback) {
      ctrl = pol.eps * stack(pol.delta.at(k));
    } else if (pol.kind == Policy::Kind::OpenLoop) {
      ctrl = stack(pol.alpha.at(k));
    }
    const KnotCoeffs c = coeffs_at(spec, k);
    VectorXd Bc(static_cast<Eigen::Index>(P.n) * P.d), Dc(static_cast<Eigen::Index>(P.n) * P.d);
    for (int i = 0; i < P.n; ++i) {
      Bc.segment(static_cast<Eigen::Index>(i) * P.d, P.d) =
          c.B[i] * ctrl.segment(static_cast<Eigen::Index>(i) * P.m, P.m);
      Dc.segment(static_cast<Eigen::Index>(i) * P.d, P.d) =
          c.D[i] * ctrl.segment(static_cast<Eigen::Index>(i) * P.m, P.m);
    }
    R.alpha_aff[k] = S.aff0[k] + ctrl;
    R.mean_b[k] = S.da0[k] + Bc;
    R.vol_c[k] = S.dv0[k] + Dc;
    R.ctrl[k] = std::move(ctrl);
  }
  return R;
}

struct PathWorkspace {
  MatrixXd X, alpha, drift, vol;
  VectorXd Xbar, aff, driftA, volA, mtmp;
  std::vector<double> common_z, zstep, zinit;

  void init(const Precomp& P, int J) {
    X.resize(static_cast<Eigen::Index>(P.n) * P.d, J);
    alpha.resize(static_cast<Eigen::Index>(P.n) * P.m, J);
    drift.resize(static_cast<Eigen::Index>(P.n) * P.d, J);
    vol.resize(static_cast<Eigen::Index>(P.n) * P.d, J);
    Xbar.resize(static_cast<Eigen::Index>(P.n) * P.d);
    aff.resize(static_cast<Eigen::Index>(P.n) * P.m);
    driftA.resize(static_cast<Eigen::Index>(P.n) * P.d);
    volA.resize(static_cast<Eigen::Index>(P.n) * P.d);
    mtmp.resize(static_cast<Eigen::Index>(P.n) * P.d);
    common_z.resize(static_cast<std::size_t>(P.n_steps));
    zstep.resize(static_cast<std::size_t>(P.n) * static_cast<std::size_t>(J));
    zinit.resize(static_cast<std::size_t>(P.n) * static_cast<std::size_t>(P.d));
  }
};

/// Runs one common path for one policy, calling obs(knot, W) at every knot
/// with W.X, W.alpha, W.Xbar holding the knot state.  `idio_buf`, when given,
/// holds the idiosyncratic normals laid out [step][particle][label];
/// otherwise they are regenerated per step from the counters (identical
/// values either way).
template <class Obs>
void run_path(const Precomp& P, const PolicyRuntime& R, int c, int J, std::uint64_t seed,
              const double* idio_buf, Obs&& obs) {
  thread_local PathWorkspace W;
  W.init(P, J);
  const MatrixSet& S = *R.S;
  const int n = P.n, d = P.d, m = P.m;

  rng::normal_fill(seed, rng::Stream::CommonNoise, static_cast<std::uint32_t>(c), 0, 0,
                   P.n_steps, W.common_z.data());

  for (int j = 0; j < J; ++j) {
    rng::normal_fill(seed, rng::Stream::InitialSim, static_cast<std::uint32_t>(c),
                     static_cast<std::uint32_t>(j), 0, n * d, W.zinit.data());
    if (P.scalar) {
      for (int i = 0; i < n; ++i)
        W.X(i, j) = P.mean_st[i] + P.init_factor1[static_cast<std::size_t>(i)] * W.zinit[static_cast<std::size_t>(i)];
    } else {
      for (int i = 0; i < n; ++i) {
        Eigen::Map<const VectorXd> z(&W.zinit[static_cast<std::size_t>(i) * d], d);
        W.X.block(static_cast<Eigen::Index>(i) * d, j, d, 1) =
            P.mean_st.segment(static_cast<Eigen::Index>(i) * d, d) +
            P.init_factor[static_cast<std::size_t>(i)] * z;
      }
    }
  }
  W.Xbar = P.mean_st;

  for (int k = 0; k <= P.n_steps; ++k) {
    // control at this knot
    if (S.W1[k].size() > 0)
      W.aff.noalias() = S.W1[k] * W.Xbar;
    else
      W.aff.setZero();
    W.aff += R.alpha_aff[k];
    if (P.scalar) {
      W.alpha.array() = (W.X.array().colwise() * S.gs1[k]).colwise() + W.aff.array();
    } else {
      for (int i = 0; i < n; ++i) {
        W.alpha.middleRows(static_cast<Eigen::Index>(i) * m, m).noalias() =
            S.Gs[k][static_cast<std::size_t>(i)] * W.X.middleRows(static_cast<Eigen::Index>(i) * d, d);
        W.alpha.middleRows(static_cast<Eigen::Index>(i) * m, m).colwise() +=
            W.aff.segment(static_cast<Eigen::Index>(i) * m, m);
      }
    }
    obs(k, W);
    if (k == P.n_steps) break;

    const double dB0 = P.sqdt * W.common_z[static_cast<std::size_t>(k)];
    const double* z = idio_buf
                          ? idio_buf + static_cast<std::size_t>(k) * static_cast<std::size_t>(J) * n
                          : W.zstep.data();
    if (!idio_buf) {
      for (int j = 0; j < J; ++j)
        rng::normal_fill(seed, rng::Stream::Idiosyncratic, static_cast<std::uint32_t>(c),
                         static_cast<std::uint32_t>(j), static_cast<std::uint32_t>(k), n,
                         W.zstep.data() + static_cast<std::size_t>(j) * n);
    }

    W.driftA.noalias() = S.DA[k] * W.Xbar;
    W.driftA += R.mean_b[k];
    W.volA.noalias() = S.DV[k] * W.Xbar;
    W.volA += R.vol_c[k];

    if (P.scalar) {
      Eigen::Map<const MatrixXd> zmat(z, n, J);
      W.drift.array() = (W.X.array().colwise() * S.aeff1[k]).colwise() + W.driftA.array();
      W.vol.array() = (W.X.array().colwise() * S.ceff1[k]).colwise() + W.volA.array();
      W.X.array() += P.dt * W.drift.array() + P.sqdt * (W.vol.array() * zmat.array());
      W.X.array().colwise() += dB0 * P.theta1[k];
    } else {
      for (int i = 0; i < n; ++i) {
        auto Xu = W.X.middleRows(static_cast<Eigen::Index>(i) * d, d);
        auto du = W.drift.middleRows(static_cast<Eigen::Index>(i) * d, d);
        auto vu = W.vol.middleRows(static_cast<Eigen::Index>(i) * d, d);
        du.noalias() = S.Aeff[k][static_cast<std::size_t>(i)] * Xu;
        du.colwise() += W.driftA.segment(static_cast<Eigen::Index>(i) * d, d);
        vu.noalias() = S.Ceff[k][static_cast<std::size_t>(i)] * Xu;
        vu.colwise() += W.volA.segment(static_cast<Eigen::Index>(i) * d, d);
        for (int j = 0; j < J; ++j) {
          Xu.col(j) += P.dt * du.col(j) +
                       (P.sqdt * z[static_cast<std::size_t>(j) * n + i]) * vu.col(j);
        }
        Xu.colwise() += dB0 * P.theta_st[k].segment(static_cast<Eigen::Index>(i) * d, d);
      }
    }
    W.mtmp.noalias() = S.Mbar[k] * W.Xbar;
    W.Xbar += P.dt * (W.mtmp + R.mean_b[k]);
    W.Xbar += dB0 * P.theta_st[k];
  }
}

/// Accumulates the cost functional of one common path: running costs with the
/// left-endpoint rectangle rule, terminal cost at the last knot, particle
/// terms averaged over the J idiosyncratic copies.
struct CostObserver {
  const Precomp* P = nullptr;
  int J = 1;
  double total = 0.0;

  void operator()(int k, PathWorkspace& W) {
    const Precomp& pre = *P;
    const double h = pre.h;
    double particle = 0.0;
    double meanfield = 0.0;
    if (k < pre.n_steps) {
      if (pre.scalar) {
        particle += (W.X.array().square().colwise() * pre.q1[k]).sum();
        particle +=
            ((W.alpha.array().colwise() + pre.i1[k]).square().colwise() * pre.r1[k]).sum();
      } else {
        const KnotCoeffs c = coeffs_at(pre.sol->spec, k);
        for (int i = 0; i < pre.n; ++i) {
          auto Xu = W.X.middleRows(static_cast<Eigen::Index>(i) * pre.d, pre.d);
          particle += (Xu.cwiseProduct(c.Q[i] * Xu)).sum();
          MatrixXd ap = W.alpha.middleRows(static_cast<Eigen::Index>(i) * pre.m, pre.m);
          ap.colwise() += c.I_off[i];
          particle += (ap.cwiseProduct(c.R[i] * ap)).sum();
        }
      }
      meanfield = h * h * W.Xbar.dot((*pre.GdQ[k]) * W.Xbar);
      total += pre.dt * (h * particle / J + meanfield);
    } else {
      if (pre.scalar) {
        particle += (W.X.array().square().colwise() * pre.h1).sum();
      } else {
        for (int i = 0; i < pre.n; ++i) {
          auto Xu = W.X.middleRows(static_cast<Eigen::Index>(i) * pre.d, pre.d);
          particle += (Xu.cwiseProduct(pre.sol->spec.H[i] * Xu)).sum();
        }
      }
      meanfield = h * h * W.Xbar.dot((*pre.GdH) * W.Xbar);
      total += h * particle / J + meanfield;
    }
  }
};

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double sd_of(const std::vector<double>& v, double mean) {
  if (v.size() < 2) return 0.0;
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

CostEstimate estimate_from(const std::vector<double>& per_common) {
  CostEstimate e;
  e.n_samples = static_cast<int>(per_common.size());
  e.mean = mean_of(per_common);
  e.std_error =
      e.n_samples > 1 ? sd_of(per_common, e.mean) / std::sqrt(static_cast<double>(e.n_samples))
                      : 0.0;
  return e;
}

/// Static partition of [0, n_common) across workers; every common path is
/// fully processed by exactly one worker and all draws are counter-keyed, so
/// results are identical for any thread count.
template <class PerCommon>
void parallel_over_common(int n_common, int threads, PerCommon&& body) {
  const int T = std::max(1, std::min(threads, n_common));
  if (T == 1) {
    for (int c = 0; c < n_common; ++c) body(c);
    return;
  }
  std::vector<std::thread> pool;
  std::exception_ptr err;
  std::mutex err_mu;
  const int chunk = (n_common + T - 1) / T;
  for (int t = 0; t < T; ++t) {
    const int lo = t * chunk, hi = std::min(n_common, (t + 1) * chunk);
    if (lo >= hi) break;
    pool.emplace_back([&, lo, hi] {
      try {
        for (int c = lo; c < hi; ++c) body(c);
      } catch (...) {
        std::lock_guard<std::mutex> g(err_mu);
        if (!err) err = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

int validated_J(const SimOptions& opt) {
  if (opt.n_common <= 0 || opt.n_idio <= 0)
    throw ConfigError("simulation: n_common and n_idio must be positive");
  return opt.n_idio;
}

}  // namespace

LockstepCosts simulate_costs(const RiccatiSolution& sol, const std::vector<Policy>& policies,
                             const SimOptions& opt) {
  if (policies.empty()) throw ConfigError("simulation: no policies given");
  const int J = validated_J(opt);
  const Precomp P = build_precomp(sol);

  std::unique_ptr<MatrixSet> ol;
  for (const auto& p : policies) {
    if (p.kind == Policy::Kind::OpenLoop && !ol)
      ol = std::make_unique<MatrixSet>(build_openloop_set(sol));
  }
  std::vector<PolicyRuntime> runtimes;
  runtimes.reserve(policies.size());
  for (const auto& p : policies)
    runtimes.push_back(
        build_policy_runtime(P, p.kind == Policy::Kind::OpenLoop ? *ol : P.fb, p));

  LockstepCosts out;
  out.per_common.assign(policies.size(),
                        std::vector<double>(static_cast<std::size_t>(opt.n_common), 0.0));

  // Idiosyncratic draws are pre-generated per common path and shared across
  // the lockstep policies unless the buffer would be large.
  const std::size_t buf_len = static_cast<std::size_t>(P.n_steps) *
                              static_cast<std::size_t>(J) * static_cast<std::size_t>(P.n);
  const bool buffered = buf_len <= (std::size_t{8} << 20);

  parallel_over_common(opt.n_common, opt.threads, [&](int c) {
    thread_local std::vector<double> idio;
    const double* buf = nullptr;
    if (buffered) {
      idio.resize(buf_len);
      for (int k = 0; k < P.n_steps; ++k)
        for (int j = 0; j < J; ++j)
          rng::normal_fill(opt.seed, rng::Stream::Idiosyncratic, static_cast<std::uint32_t>(c),
                           static_cast<std::uint32_t>(j), static_cast<std::uint32_t>(k), P.n,
                           idio.data() + (static_cast<std::size_t>(k) * J + j) * P.n);
      buf = idio.data();
    }
    for (std::size_t p = 0; p < policies.size(); ++p) {
      CostObserver obs{&P, J, 0.0};
      run_path(P, runtimes[p], c, J, opt.seed, buf, obs);
      out.per_common[p][static_cast<std::size_t>(c)] = obs.total;
    }
  });

  out.cost.reserve(policies.size());
  for (const auto& pc : out.per_common) out.cost.push_back(estimate_from(pc));
  return out;
}

double perturbation_penalty(const RiccatiSolution& sol, const TimePath<VectorField>& delta,
                            double eps) {
  const ProblemSpec& spec = sol.spec;
  const double h = spec.grid.weight();
  const double dt = spec.tgrid.dt();
  double acc = 0.0;
  for (int k = 0; k < spec.tgrid.n_steps(); ++k) {
    const VectorField& dlt = delta.at(k);
    const MatrixField& O = sol.O[static_cast<std::size_t>(k)];
    double s = 0.0;
    for (int i = 0; i < spec.grid.size(); ++i) s += dlt[i].dot(O[i] * dlt[i]);
    acc += dt * h * s;
  }
  return eps * eps * acc;
}

FundamentalRelationReport fundamental_relation(const RiccatiSolution& sol, double eps,
                                               const TimePath<VectorField>& delta,
                                               const SimOptions& opt) {
  if (!(eps > 0.0)) throw ConfigError("fundamental relation: eps must be positive");
  std::vector<Policy> policies{Policy::Feedback(), Policy::Perturbed(eps, delta),
                               Policy::Perturbed(-eps, delta)};
  const LockstepCosts costs = simulate_costs(sol, policies, opt);

  FundamentalRelationReport rep;
  rep.eps = eps;
  rep.n_common = opt.n_common;
  rep.n_idio = opt.n_idio;
  rep.J_hat = costs.cost[0].mean;
  rep.V = value_function(sol);
  rep.penalty = perturbation_penalty(sol, delta, eps);

  rep.residual_a = rep.J_hat - rep.V;
  rep.se_a = costs.cost[0].std_error;

  const std::size_t nc = costs.per_common[0].size();
  std::vector<double> diff_plus(nc), centered(nc);
  for (std::size_t c = 0; c < nc; ++c) {
    diff_plus[c] = costs.per_common[1][c] - costs.per_common[0][c];
    centered[c] = (costs.per_common[1][c] - costs.per_common[2][c]) / (2.0 * eps);
  }
  const double mb = mean_of(diff_plus);
  rep.residual_b = mb - rep.penalty;
  rep.se_b = sd_of(diff_plus, mb) / std::sqrt(static_cast<double>(nc));
  const double mc = mean_of(centered);
  rep.residual_c = mc;
  rep.se_c = sd_of(centered, mc) / std::sqrt(static_cast<double>(nc));
  return rep;
}

FundamentalRelationReport fundamental_relation(const RiccatiSolution& sol, double eps,
                                               const SimOptions& opt) {
  const VectorField ones =
      VectorField::Constant(sol.spec.grid, Eigen::VectorXd::Ones(sol.spec.m));
  return fundamental_relation(sol, eps, TimePath<VectorField>(ones), opt);
}

EnsembleStats simulate_ensemble(const RiccatiSolution& sol, const Policy& policy,
                                const SimOptions& opt, int max_knots) {
  const int J = validated_J(opt);
  if (max_knots < 2) throw ConfigError("simulation: max_knots must be at least 2");
  const Precomp P = build_precomp(sol);

  std::unique_ptr<MatrixSet> ol;
  if (policy.kind == Policy::Kind::OpenLoop)
    ol = std::make_unique<MatrixSet>(build_openloop_set(sol));
  const PolicyRuntime runtime = build_policy_runtime(P, ol ? *ol : P.fb, policy);

  EnsembleStats out;
  const int stride = std::max(1, (P.n_steps + max_knots - 2) / (max_knots - 1));
  std::vector<int> sel_of_knot(static_cast<std::size_t>(P.n_knots), -1);
  for (int k = 0; k < P.n_steps; k += stride) {
    sel_of_knot[static_cast<std::size_t>(k)] = static_cast<int>(out.knots.size());
    out.knots.push_back(k);
  }
  sel_of_knot[static_cast<std::size_t>(P.n_steps)] = static_cast<int>(out.knots.size());
  out.knots.push_back(P.n_steps);
  for (int k : out.knots) out.t.push_back(sol.spec.tgrid.time(k));

  const std::size_t n_sel = out.knots.size();
  const std::size_t n_paths =
      static_cast<std::size_t>(opt.n_common) * static_cast<std::size_t>(J);
  // samples[sel * n + label][path]
  std::vector<std::vector<double>> xs(n_sel * static_cast<std::size_t>(P.n)),
      as(n_sel * static_cast<std::size_t>(P.n));
  for (auto& v : xs) v.resize(n_paths);
  for (auto& v : as) v.resize(n_paths);

  parallel_over_common(opt.n_common, opt.threads, [&](int c) {
    const auto obs = [&](int k, PathWorkspace& W) {
      const int sel = sel_of_knot[static_cast<std::size_t>(k)];
      if (sel < 0) return;
      for (int i = 0; i < P.n; ++i) {
        const std::size_t row = static_cast<std::size_t>(sel) * P.n + static_cast<std::size_t>(i);
        for (int j = 0; j < J; ++j) {
          const std::size_t slot = static_cast<std::size_t>(c) * J + static_cast<std::size_t>(j);
          xs[row][slot] = W.X(static_cast<Eigen::Index>(i) * P.d, j);
          as[row][slot] = W.alpha(static_cast<Eigen::Index>(i) * P.m, j);
        }
      }
    };
    run_path(P, runtime, c, J, opt.seed, nullptr, obs);
  });

  const auto quantile = [](std::vector<double> v, double p) {
    std::sort(v.begin(), v.end());
    const double x = p * static_cast<double>(v.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(x);
    const double frac = x - static_cast<double>(lo);
    return lo + 1 < v.size() ? v[lo] + frac * (v[lo + 1] - v[lo]) : v[lo];
  };

  const auto summarize = [&](const std::vector<std::vector<double>>& samples,
                             std::vector<std::vector<double>>& mean,
                             std::vector<std::vector<double>>& q05,
                             std::vector<std::vector<double>>& q95) {
    mean.assign(n_sel, std::vector<double>(static_cast<std::size_t>(P.n), 0.0));
    q05 = mean;
    q95 = mean;
    for (std::size_t s = 0; s < n_sel; ++s) {
      for (int i = 0; i < P.n; ++i) {
        const auto& v = samples[s * static_cast<std::size_t>(P.n) + static_cast<std::size_t>(i)];
        mean[s][static_cast<std::size_t>(i)] = mean_of(v);
        q05[s][static_cast<std::size_t>(i)] = quantile(v, 0.05);
        q95[s][static_cast<std::size_t>(i)] = quantile(v, 0.95);
      }
    }
  };
  summarize(xs, out.x_mean, out.x_q05, out.x_q95);
  summarize(as, out.a_mean, out.a_q05, out.a_q95);
  return out;
}

ConditionalMeanCheck nested_conditional_mean(const RiccatiSolution& sol, int n_idio,
                                             std::uint64_t seed) {
  if (n_idio < 2) throw ConfigError("nested_conditional_mean: need at least two particles");
  const Precomp P = build_precomp(sol);
  const PolicyRuntime runtime = build_policy_runtime(P, P.fb, Policy::Feedback());

  ConditionalMeanCheck out;
  out.n_idio = n_idio;
  out.t.resize(static_cast<std::size_t>(P.n_knots));
  out.deviation.resize(static_cast<std::size_t>(P.n_knots));
  out.std_error.resize(static_cast<std::size_t>(P.n_knots));

  const auto obs = [&](int k, PathWorkspace& W) {
    const std::size_t ks = static_cast<std::size_t>(k);
    out.t[ks] = sol.spec.tgrid.time(k);
    // label-integrated functional per particle: f_j = h Σ rows X(:, j)
    const Eigen::RowVectorXd f = P.h * W.X.colwise().sum();
    const double fbar = f.mean();
    out.deviation[ks] = fbar - P.h * W.Xbar.sum();
    double s2 = 0.0;
    for (Eigen::Index j = 0; j < f.size(); ++j) s2 += (f[j] - fbar) * (f[j] - fbar);
    out.std_error[ks] =
        std::sqrt(s2 / static_cast<double>(f.size() - 1)) / std::sqrt(static_cast<double>(f.size()));
  };
  run_path(P, runtime, 0, n_idio, seed, nullptr, obs);

  double mz = 0.0;
  for (std::size_t k = 0; k < out.deviation.size(); ++k) {
    const double se = out.std_error[k];
    const double dev = std::abs(out.deviation[k]);
    if (se > 0.0)
      mz = std::max(mz, dev / se);
    else if (dev > 0.0)
      mz = std::numeric_limits<double>::infinity();
  }
  out.max_abs_z = mz;
  return out;
}

}  // namespace mflq
