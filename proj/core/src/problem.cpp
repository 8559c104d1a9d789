#include "mflq/problem.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "mflq/rng.hpp"

namespace mflq {
namespace {

constexpr double kSymTol = 1e-10;

void require(bool cond, const std::string& msg) {
  if (!cond) throw ModelError(msg);
}

void check_matrix_field(const MatrixField& f, const LabelGrid& grid, int rows, int cols,
                        const std::string& name) {
  require(f.grid == grid, name + ": label grid mismatch");
  require(static_cast<int>(f.values.size()) == grid.size(), name + ": wrong number of labels");
  for (const auto& M : f.values) {
    require(M.rows() == rows && M.cols() == cols, name + ": wrong block shape");
    require(M.allFinite(), name + ": non-finite entry");
  }
}

void check_vector_field(const VectorField& f, const LabelGrid& grid, int dim,
                        const std::string& name) {
  require(f.grid == grid, name + ": label grid mismatch");
  require(static_cast<int>(f.values.size()) == grid.size(), name + ": wrong number of labels");
  for (const auto& v : f.values) {
    require(v.size() == dim, name + ": wrong dimension");
    require(v.allFinite(), name + ": non-finite entry");
  }
}

void check_kernel(const MatrixKernel& K, const LabelGrid& grid, int rows, int cols,
                  const std::string& name) {
  require(K.grid() == grid, name + ": label grid mismatch");
  require(K.block_rows() == rows && K.block_cols() == cols, name + ": wrong block shape");
  require(K.dense().allFinite(), name + ": non-finite entry");
}

template <class T, class Fn>
void for_each_knot(const TimePath<T>& path, const TimeGrid& tgrid, Fn&& fn) {
  const int n = path.is_constant() ? 1 : tgrid.n_knots();
  for (int k = 0; k < n; ++k) fn(path.at(k));
}

template <class T>
void check_path_length(const TimePath<T>& path, const TimeGrid& tgrid, const std::string& name) {
  require(path.n_knots() == 1 || path.n_knots() == tgrid.n_knots(),
          name + ": time path must have 1 or n_knots entries");
}

void check_symmetric(const Eigen::MatrixXd& M, const std::string& name) {
  const double scale = std::max(1.0, M.cwiseAbs().maxCoeff());
  require((M - M.transpose()).cwiseAbs().maxCoeff() <= kSymTol * scale, name + ": not symmetric");
}

double min_eigenvalue(const Eigen::MatrixXd& M) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

/// Min eigenvalue of the assembled operator M_W + T_G, self-adjoint w.r.t.
/// the h-weighted inner product, i.e. of the symmetric matrix BD(W) + h G.
double assembled_min_eig(const MatrixField& W, const MatrixKernel& G) {
  Eigen::MatrixXd M = block_diagonal(W) + W.grid.weight() * G.dense();
  return min_eigenvalue(0.5 * (M + M.transpose()));
}

}  // namespace

ProblemSpec ProblemSpec::Zero(const LabelGrid& grid, const TimeGrid& tgrid, int d, int m) {
  ProblemSpec s;
  s.grid = grid;
  s.tgrid = tgrid;
  s.d = d;
  s.m = m;
  const auto zm = [&](int r, int c) {
    return TimePath<MatrixField>(MatrixField::Constant(grid, Eigen::MatrixXd::Zero(r, c)));
  };
  const auto zv = [&](int r) {
    return TimePath<VectorField>(VectorField::Constant(grid, Eigen::VectorXd::Zero(r)));
  };
  const auto zk = [&](int r, int c) { return TimePath<MatrixKernel>(MatrixKernel(grid, r, c)); };
  s.A = zm(d, d);
  s.B = zm(d, m);
  s.beta = zv(d);
  s.G_A = zk(d, d);
  s.C = zm(d, d);
  s.D = zm(d, m);
  s.gamma = zv(d);
  s.G_C = zk(d, d);
  s.theta = zv(d);
  s.Q = zm(d, d);
  s.G_Q = zk(d, d);
  s.R = TimePath<MatrixField>(MatrixField::Constant(grid, Eigen::MatrixXd::Identity(m, m)));
  s.I_off = zv(m);
  s.H = MatrixField::Constant(grid, Eigen::MatrixXd::Zero(d, d));
  s.G_H = MatrixKernel(grid, d, d);
  s.xi_mean = VectorField::Constant(grid, Eigen::VectorXd::Zero(d));
  s.xi_cov = MatrixField::Constant(grid, Eigen::MatrixXd::Zero(d, d));
  return s;
}

PositivityReport validate(const ProblemSpec& spec) {
  require(spec.grid.size() >= 1, "grid: need at least one label");
  require(spec.tgrid.n_steps() >= 1, "time: grid not initialized");
  require(spec.d >= 1 && spec.m >= 1, "dims: d and m must be positive");
  require(spec.coercivity_c > 0.0, "coercivity_c must be positive");

  const LabelGrid& g = spec.grid;
  const TimeGrid& tg = spec.tgrid;
  const int d = spec.d, m = spec.m;

  const auto check_mpath = [&](const TimePath<MatrixField>& p, int r, int c,
                               const std::string& name) {
    check_path_length(p, tg, name);
    for_each_knot(p, tg, [&](const MatrixField& f) { check_matrix_field(f, g, r, c, name); });
  };
  const auto check_vpath = [&](const TimePath<VectorField>& p, int r, const std::string& name) {
    check_path_length(p, tg, name);
    for_each_knot(p, tg, [&](const VectorField& f) { check_vector_field(f, g, r, name); });
  };
  const auto check_kpath = [&](const TimePath<MatrixKernel>& p, int r, int c,
                               const std::string& name) {
    check_path_length(p, tg, name);
    for_each_knot(p, tg, [&](const MatrixKernel& K) { check_kernel(K, g, r, c, name); });
  };

  check_mpath(spec.A, d, d, "A");
  check_mpath(spec.B, d, m, "B");
  check_vpath(spec.beta, d, "beta");
  check_kpath(spec.G_A, d, d, "G_A");
  check_mpath(spec.C, d, d, "C");
  check_mpath(spec.D, d, m, "D");
  check_vpath(spec.gamma, d, "gamma");
  check_kpath(spec.G_C, d, d, "G_C");
  check_vpath(spec.theta, d, "theta");
  check_mpath(spec.Q, d, d, "Q");
  check_kpath(spec.G_Q, d, d, "G_Q");
  check_mpath(spec.R, m, m, "R");
  check_vpath(spec.I_off, m, "I");
  check_matrix_field(spec.H, g, d, d, "H");
  check_kernel(spec.G_H, g, d, d, "G_H");
  check_vector_field(spec.xi_mean, g, d, "initial.mean");
  check_matrix_field(spec.xi_cov, g, d, d, "initial.cov");

  // Symmetry and pointwise positivity of the cost weights.
  for_each_knot(spec.Q, tg, [&](const MatrixField& f) {
    for (const auto& M : f.values) {
      check_symmetric(M, "Q");
      require(min_eigenvalue(M) >= -kSymTol * std::max(1.0, M.norm()), "Q: not PSD");
    }
  });
  for (const auto& M : spec.H.values) {
    check_symmetric(M, "H");
    require(min_eigenvalue(M) >= -kSymTol * std::max(1.0, M.norm()), "H: not PSD");
  }
  for (const auto& M : spec.xi_cov.values) {
    check_symmetric(M, "initial.cov");
    require(min_eigenvalue(M) >= -kSymTol * std::max(1.0, M.norm()),
            "initial.cov: not a covariance");
  }
  for_each_knot(spec.G_Q, tg, [&](const MatrixKernel& K) {
    require(is_symmetric_kernel(K, kSymTol), "G_Q: not a symmetric kernel");
  });
  require(is_symmetric_kernel(spec.G_H, kSymTol), "G_H: not a symmetric kernel");

  PositivityReport report;
  report.min_eig_R = std::numeric_limits<double>::infinity();
  for_each_knot(spec.R, tg, [&](const MatrixField& f) {
    for (const auto& M : f.values) {
      check_symmetric(M, "R");
      report.min_eig_R = std::min(report.min_eig_R, min_eigenvalue(M));
    }
  });
  if (report.min_eig_R < spec.coercivity_c) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "R: coercivity violated (min eig %.6g < c = %.6g)",
                  report.min_eig_R, spec.coercivity_c);
    throw ModelError(buf);
  }

  // Assembled running / terminal cost operators; negative values are
  // reported but allowed (the control problem only requires R coercive).
  report.min_eig_Q_plus_GQ = std::numeric_limits<double>::infinity();
  const int kq = (spec.Q.is_constant() && spec.G_Q.is_constant()) ? 1 : tg.n_knots();
  for (int k = 0; k < kq; ++k) {
    report.min_eig_Q_plus_GQ =
        std::min(report.min_eig_Q_plus_GQ, assembled_min_eig(spec.Q.at(k), spec.G_Q.at(k)));
  }
  report.min_eig_H_plus_GH = assembled_min_eig(spec.H, spec.G_H);

  if (report.min_eig_Q_plus_GQ < -kSymTol || report.min_eig_H_plus_GH < -kSymTol) {
    report.note = "assembled cost operator not PSD; solvability is not guaranteed";
  } else {
    report.note = "ok";
  }
  return report;
}

MatrixKernel centered_transform(const MatrixKernel& G_hat, const MatrixField& W) {
  require(G_hat.block_rows() == G_hat.block_cols(), "centered_transform: kernel must be square");
  require(is_symmetric_kernel(G_hat, kSymTol), "centered_transform: kernel must be symmetric");
  const LabelGrid& grid = G_hat.grid();
  const int d = G_hat.block_rows();
  check_matrix_field(W, grid, d, d, "centered_transform weight");
  for (const auto& M : W.values) {
    check_symmetric(M, "centered_transform weight");
    require(min_eigenvalue(M) >= -kSymTol * std::max(1.0, M.norm()),
            "centered_transform: weight not PSD");
  }
  const Eigen::MatrixXd bd = block_diagonal(W);
  const Eigen::MatrixXd& Gd = G_hat.dense();
  Eigen::MatrixXd dense = grid.weight() * (Gd * bd * Gd) - bd * Gd - Gd * bd;
  return MatrixKernel::FromDense(grid, d, d, std::move(dense));
}

std::vector<VectorField> build_initial_condition(const ProblemSpec& spec, int n_samples,
                                                 std::uint64_t rng_seed) {
  require(n_samples >= 0, "build_initial_condition: negative sample count");
  const LabelGrid& g = spec.grid;
  const int d = spec.d;

  // PSD square roots of the per-label covariances, computed once.
  std::vector<Eigen::MatrixXd> factor(static_cast<std::size_t>(g.size()));
  for (int i = 0; i < g.size(); ++i) {
    const Eigen::MatrixXd& cov = spec.xi_cov[i];
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    require(es.eigenvalues().minCoeff() >= -kSymTol * std::max(1.0, cov.norm()),
            "initial.cov: not a covariance");
    factor[static_cast<std::size_t>(i)] =
        es.eigenvectors() *
        es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
        es.eigenvectors().transpose();
  }

  std::vector<VectorField> out;
  out.reserve(static_cast<std::size_t>(n_samples));
  for (int s = 0; s < n_samples; ++s) {
    VectorField f{g, std::vector<Eigen::VectorXd>(static_cast<std::size_t>(g.size()))};
    for (int i = 0; i < g.size(); ++i) {
      Eigen::VectorXd z(d);
      for (int k = 0; k < d; ++k) {
        z[k] = rng::normal(rng_seed, rng::Stream::InitialBatch, static_cast<std::uint32_t>(s), 0,
                           static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(k));
      }
      f.values[static_cast<std::size_t>(i)] =
          spec.xi_mean[i] + factor[static_cast<std::size_t>(i)] * z;
    }
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace mflq
