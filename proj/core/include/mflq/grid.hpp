#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <vector>

namespace mflq {

/// Uniform discretization of the label set I = [0,1].
///
/// Nodes sit at cell midpoints u_i = (i + 1/2)/N so that step-graphon
/// discontinuities at rational cut points never coincide with a node, and
/// every integral over I becomes the rectangle rule  ∫ f du  ≈  h · Σ_i f(u_i)
/// with the single quadrature weight h = 1/N.
class LabelGrid {
 public:
  LabelGrid() = default;

  explicit LabelGrid(int n_labels) : n_(n_labels) {
    if (n_labels <= 0) throw std::invalid_argument("LabelGrid: n_labels must be positive");
    h_ = 1.0 / static_cast<double>(n_);
    nodes_.resize(n_);
    for (int i = 0; i < n_; ++i) nodes_[i] = (static_cast<double>(i) + 0.5) * h_;
  }

  [[nodiscard]] int size() const { return n_; }
  [[nodiscard]] double weight() const { return h_; }
  [[nodiscard]] double node(int i) const { return nodes_[i]; }
  [[nodiscard]] const std::vector<double>& nodes() const { return nodes_; }

  friend bool operator==(const LabelGrid& a, const LabelGrid& b) { return a.n_ == b.n_; }
  friend bool operator!=(const LabelGrid& a, const LabelGrid& b) { return a.n_ != b.n_; }

 private:
  int n_ = 0;
  double h_ = 0.0;
  std::vector<double> nodes_;
};

/// Uniform time grid on [t0, T] with n_steps intervals and n_steps+1 knots.
class TimeGrid {
 public:
  TimeGrid() = default;

  TimeGrid(double t0, double T, int n_steps) : t0_(t0), T_(T), n_steps_(n_steps) {
    if (!(t0 < T)) throw std::invalid_argument("TimeGrid: requires t0 < T");
    if (n_steps <= 0) throw std::invalid_argument("TimeGrid: n_steps must be positive");
    dt_ = (T - t0) / static_cast<double>(n_steps);
    times_.resize(n_steps + 1);
    for (int k = 0; k <= n_steps; ++k) times_[k] = t0 + static_cast<double>(k) * dt_;
    times_[n_steps] = T;  // guard the last knot against rounding
  }

  [[nodiscard]] double t0() const { return t0_; }
  [[nodiscard]] double horizon() const { return T_; }
  [[nodiscard]] int n_steps() const { return n_steps_; }
  [[nodiscard]] int n_knots() const { return n_steps_ + 1; }
  [[nodiscard]] double dt() const { return dt_; }
  [[nodiscard]] double time(int k) const { return times_[k]; }
  [[nodiscard]] const std::vector<double>& times() const { return times_; }

 private:
  double t0_ = 0.0, T_ = 0.0;
  int n_steps_ = 0;
  double dt_ = 0.0;
  std::vector<double> times_;
};

/// Per-label values: one entry of V per grid node (V is a vector, a matrix or
/// a scalar depending on use).  Discretizes L²(I; ·) and L^∞(I; ·).
template <class V>
struct LabelField {
  LabelGrid grid;
  std::vector<V> values;

  LabelField() = default;
  LabelField(LabelGrid g, std::vector<V> vals) : grid(g), values(std::move(vals)) {
    if (static_cast<int>(values.size()) != grid.size())
      throw std::invalid_argument("LabelField: value count must match grid");
  }

  /// Same value at every label.
  static LabelField Constant(const LabelGrid& g, const V& v) {
    return LabelField(g, std::vector<V>(static_cast<std::size_t>(g.size()), v));
  }

  [[nodiscard]] int size() const { return grid.size(); }
  [[nodiscard]] const V& operator[](int i) const { return values[static_cast<std::size_t>(i)]; }
  [[nodiscard]] V& operator[](int i) { return values[static_cast<std::size_t>(i)]; }
};

using ScalarField = LabelField<double>;
using VectorField = LabelField<Eigen::VectorXd>;
using MatrixField = LabelField<Eigen::MatrixXd>;

/// Stack a vector field into one (N·d) column, label-major.
[[nodiscard]] inline Eigen::VectorXd stack(const VectorField& f) {
  const int n = f.size();
  const int d = n > 0 ? static_cast<int>(f[0].size()) : 0;
  Eigen::VectorXd out(static_cast<Eigen::Index>(n) * d);
  for (int i = 0; i < n; ++i) out.segment(static_cast<Eigen::Index>(i) * d, d) = f[i];
  return out;
}

/// Inverse of stack().
[[nodiscard]] inline VectorField unstack(const LabelGrid& g, int d, const Eigen::VectorXd& v) {
  if (v.size() != static_cast<Eigen::Index>(g.size()) * d)
    throw std::invalid_argument("unstack: size mismatch");
  VectorField f;
  f.grid = g;
  f.values.resize(static_cast<std::size_t>(g.size()));
  for (int i = 0; i < g.size(); ++i) f[i] = v.segment(static_cast<Eigen::Index>(i) * d, d);
  return f;
}

}  // namespace mflq
