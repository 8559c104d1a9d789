#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mflq/problem.hpp"

namespace mflq {
namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& msg) { throw ConfigError("config: " + msg); }

const json* find(const json& j, const char* key) {
  if (!j.is_object()) return nullptr;
  auto it = j.find(key);
  return it == j.end() ? nullptr : &*it;
}

double as_number(const json& j, const std::string& name) {
  if (!j.is_number()) fail(name + ": expected a number");
  return j.get<double>();
}

int as_int(const json& j, const std::string& name) {
  if (!j.is_number_integer()) fail(name + ": expected an integer");
  return j.get<int>();
}

/// Matrix entry: a number broadcasts onto the diagonal, a flat array fills a
/// one-row or one-column matrix, an array of arrays gives the full matrix.
Eigen::MatrixXd parse_matrix(const json& j, int r, int c, const std::string& name) {
  if (j.is_number()) {
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(r, c);
    for (int i = 0; i < std::min(r, c); ++i) M(i, i) = j.get<double>();
    return M;
  }
  if (j.is_array()) {
    if (!j.empty() && j[0].is_array()) {
      if (static_cast<int>(j.size()) != r) fail(name + ": expected " + std::to_string(r) + " rows");
      Eigen::MatrixXd M(r, c);
      for (int i = 0; i < r; ++i) {
        const json& row = j[static_cast<std::size_t>(i)];
        if (!row.is_array() || static_cast<int>(row.size()) != c)
          fail(name + ": expected " + std::to_string(c) + " columns");
        for (int k = 0; k < c; ++k)
          M(i, k) = as_number(row[static_cast<std::size_t>(k)], name);
      }
      return M;
    }
    if (c == 1 && static_cast<int>(j.size()) == r) {
      Eigen::MatrixXd M(r, 1);
      for (int i = 0; i < r; ++i) M(i, 0) = as_number(j[static_cast<std::size_t>(i)], name);
      return M;
    }
    if (r == 1 && static_cast<int>(j.size()) == c) {
      Eigen::MatrixXd M(1, c);
      for (int i = 0; i < c; ++i) M(0, i) = as_number(j[static_cast<std::size_t>(i)], name);
      return M;
    }
    fail(name + ": array has the wrong shape");
  }
  fail(name + ": expected a number or an array");
}

/// Vector entry: a number fills every component, an array gives them all.
Eigen::VectorXd parse_vec(const json& j, int n, const std::string& name) {
  if (j.is_number()) return Eigen::VectorXd::Constant(n, j.get<double>());
  if (j.is_array()) {
    if (static_cast<int>(j.size()) != n)
      fail(name + ": expected " + std::to_string(n) + " components");
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = as_number(j[static_cast<std::size_t>(i)], name);
    return v;
  }
  fail(name + ": expected a number or an array");
}

std::vector<double> parse_cuts(const json* cuts, int k, const std::string& name) {
  if (cuts == nullptr) return {};
  if (!cuts->is_array() || static_cast<int>(cuts->size()) != k - 1)
    fail(name + ": step with k values needs k-1 cuts");
  std::vector<double> out;
  out.reserve(cuts->size());
  for (const auto& c : *cuts) out.push_back(as_number(c, name + ".cuts"));
  return out;
}

int community_of(double u, const std::vector<double>& cuts) {
  int a = 0;
  while (a < static_cast<int>(cuts.size()) && u >= cuts[static_cast<std::size_t>(a)]) ++a;
  return a;
}

/// Label-dependence forms shared by all coefficients:
///   <entry>                      same value at every label (shorthand)
///   {"constant": <entry>}        same value at every label
///   {"values": [<entry> x N]}    one entry per grid node
///   {"step": {"values": [...], "cuts": [...]}}  piecewise in the label
template <class V, class ParseEntry>
LabelField<V> parse_field(const json& j, const LabelGrid& grid, const std::string& name,
                          ParseEntry entry) {
  if (j.is_object()) {
    if (const json* e = find(j, "constant")) return LabelField<V>::Constant(grid, entry(*e));
    if (const json* e = find(j, "values")) {
      if (!e->is_array() || static_cast<int>(e->size()) != grid.size())
        fail(name + ": values must list one entry per label");
      std::vector<V> vals;
      vals.reserve(e->size());
      for (const auto& item : *e) vals.push_back(entry(item));
      return LabelField<V>(grid, std::move(vals));
    }
    if (const json* s = find(j, "step")) {
      const json* vs = find(*s, "values");
      if (vs == nullptr || !vs->is_array() || vs->empty())
        fail(name + ": step needs a values array");
      const int k = static_cast<int>(vs->size());
      std::vector<double> cuts = parse_cuts(find(*s, "cuts"), k, name);
      if (cuts.empty() && k > 1) {
        for (int a = 1; a < k; ++a) cuts.push_back(static_cast<double>(a) / k);
      }
      std::vector<V> parsed;
      parsed.reserve(vs->size());
      for (const auto& item : *vs) parsed.push_back(entry(item));
      std::vector<V> vals;
      vals.reserve(static_cast<std::size_t>(grid.size()));
      for (int i = 0; i < grid.size(); ++i)
        vals.push_back(parsed[static_cast<std::size_t>(community_of(grid.node(i), cuts))]);
      return LabelField<V>(grid, std::move(vals));
    }
    fail(name + ": unknown coefficient form (use constant / values / step)");
  }
  return LabelField<V>::Constant(grid, entry(j));
}

MatrixField parse_matrix_field(const json* j, const LabelGrid& grid, int r, int c,
                               const std::string& name) {
  if (j == nullptr) return MatrixField::Constant(grid, Eigen::MatrixXd::Zero(r, c));
  return parse_field<Eigen::MatrixXd>(*j, grid, name,
                                      [&](const json& e) { return parse_matrix(e, r, c, name); });
}

VectorField parse_vector_field(const json* j, const LabelGrid& grid, int n,
                               const std::string& name) {
  if (j == nullptr) return VectorField::Constant(grid, Eigen::VectorXd::Zero(n));
  return parse_field<Eigen::VectorXd>(*j, grid, name,
                                      [&](const json& e) { return parse_vec(e, n, name); });
}

MatrixKernel parse_graphon(const json& j, const LabelGrid& grid, const std::string& name) {
  const json* type = find(j, "type");
  if (type == nullptr || !type->is_string()) fail(name + ": graphon needs a type string");
  const std::string t = type->get<std::string>();
  if (t == "constant") {
    const json* v = find(j, "value");
    if (v == nullptr) fail(name + ": constant graphon needs a value");
    return graphon::constant(grid, as_number(*v, name + ".value"));
  }
  if (t == "step") {
    const json* b = find(j, "blocks");
    if (b == nullptr || !b->is_array() || b->empty())
      fail(name + ": step graphon needs a blocks matrix");
    const int k = static_cast<int>(b->size());
    std::vector<std::vector<double>> blocks(static_cast<std::size_t>(k));
    for (int a = 0; a < k; ++a) {
      const json& row = (*b)[static_cast<std::size_t>(a)];
      if (!row.is_array() || static_cast<int>(row.size()) != k)
        fail(name + ": blocks must be a square matrix");
      for (const auto& x : row)
        blocks[static_cast<std::size_t>(a)].push_back(as_number(x, name + ".blocks"));
    }
    return graphon::step(grid, blocks, parse_cuts(find(j, "cuts"), k, name));
  }
  if (t == "min") return graphon::min_uv(grid);
  if (t == "exp") {
    const json* l = find(j, "length_scale");
    if (l == nullptr) fail(name + ": exp graphon needs a length_scale");
    return graphon::exp_abs(grid, as_number(*l, name + ".length_scale"));
  }
  fail(name + ": unknown graphon type '" + t + "' (use constant / step / min / exp)");
}

/// Kernel coefficient forms:
///   omitted or {"zero": true}                 zero kernel
///   {"graphon": {...}, "scale": s}            scalar graphon lifted to d×d
///   {"centered": {"graphon": {...}, "scale": s}}
///       centered transform with the enclosing section's weight (Q or H)
///   {"csv": "path", "scale": s}               tabulated d×d blocks
MatrixKernel parse_kernel(const json* j, const LabelGrid& grid, int d, const std::string& name,
                          const std::string& base_dir, const MatrixField* centered_weight) {
  if (j == nullptr) return MatrixKernel(grid, d, d);
  if (!j->is_object()) fail(name + ": expected an object");
  double scale = 1.0;
  if (const json* s = find(*j, "scale")) scale = as_number(*s, name + ".scale");

  const auto scaled = [&](MatrixKernel k) {
    if (scale != 1.0) {
      Eigen::MatrixXd dense = scale * k.dense();
      return MatrixKernel::FromDense(k.grid(), k.block_rows(), k.block_cols(), std::move(dense));
    }
    return k;
  };

  if (const json* z = find(*j, "zero")) {
    if (!z->is_boolean() || !z->get<bool>()) fail(name + ": zero must be true");
    return MatrixKernel(grid, d, d);
  }
  if (const json* g = find(*j, "graphon"))
    return scaled(graphon::lift(parse_graphon(*g, grid, name), d));
  if (const json* c = find(*j, "centered")) {
    if (centered_weight == nullptr)
      fail(name + ": centered kernels are only supported for G_Q and G_H");
    const json* g = find(*c, "graphon");
    if (g == nullptr) fail(name + ": centered needs a graphon");
    double cscale = 1.0;
    if (const json* s = find(*c, "scale")) cscale = as_number(*s, name + ".centered.scale");
    MatrixKernel base = graphon::lift(parse_graphon(*g, grid, name), d);
    if (cscale != 1.0) {
      Eigen::MatrixXd dense = cscale * base.dense();
      base = MatrixKernel::FromDense(grid, d, d, std::move(dense));
    }
    return scaled(centered_transform(base, *centered_weight));
  }
  if (const json* p = find(*j, "csv")) {
    if (!p->is_string()) fail(name + ": csv must be a path string");
    std::filesystem::path path(p->get<std::string>());
    if (path.is_relative()) path = std::filesystem::path(base_dir) / path;
    try {
      return scaled(graphon::from_csv(grid, d, d, path.string()));
    } catch (const std::exception& e) {
      fail(name + ": " + e.what());
    }
  }
  fail(name + ": unknown kernel form (use zero / graphon / centered / csv)");
}

ProblemSpec parse_impl(const json& root, const std::string& base_dir) {
  if (!root.is_object()) fail("top level must be an object");

  ProblemSpec spec;
  if (const json* n = find(root, "name")) {
    if (!n->is_string()) fail("name: expected a string");
    spec.name = n->get<std::string>();
  }

  const json* grid = find(root, "grid");
  if (grid == nullptr) fail("missing grid section");
  const json* n_labels = find(*grid, "n_labels");
  if (n_labels == nullptr) fail("grid: missing n_labels");
  const int n = as_int(*n_labels, "grid.n_labels");
  if (n <= 0) fail("grid.n_labels: must be positive");
  spec.grid = LabelGrid(n);

  const json* time = find(root, "time");
  if (time == nullptr) fail("missing time section");
  double t0 = 0.0;
  if (const json* v = find(*time, "t0")) t0 = as_number(*v, "time.t0");
  const json* horizon = find(*time, "horizon");
  if (horizon == nullptr) fail("time: missing horizon");
  const json* n_steps = find(*time, "n_steps");
  if (n_steps == nullptr) fail("time: missing n_steps");
  const double T = as_number(*horizon, "time.horizon");
  const int steps = as_int(*n_steps, "time.n_steps");
  if (!(T > t0)) fail("time: horizon must exceed t0");
  if (steps <= 0) fail("time.n_steps: must be positive");
  spec.tgrid = TimeGrid(t0, T, steps);

  spec.d = 1;
  spec.m = 1;
  if (const json* dims = find(root, "dims")) {
    if (const json* v = find(*dims, "state")) spec.d = as_int(*v, "dims.state");
    if (const json* v = find(*dims, "control")) spec.m = as_int(*v, "dims.control");
  }
  if (spec.d <= 0 || spec.m <= 0) fail("dims: state and control must be positive");
  const int d = spec.d, m = spec.m;
  const LabelGrid& g = spec.grid;

  const json* drift = find(root, "drift");
  spec.A = TimePath<MatrixField>(parse_matrix_field(drift ? find(*drift, "A") : nullptr, g, d, d, "drift.A"));
  spec.B = TimePath<MatrixField>(parse_matrix_field(drift ? find(*drift, "B") : nullptr, g, d, m, "drift.B"));
  spec.beta = TimePath<VectorField>(parse_vector_field(drift ? find(*drift, "beta") : nullptr, g, d, "drift.beta"));
  spec.G_A = TimePath<MatrixKernel>(
      parse_kernel(drift ? find(*drift, "G_A") : nullptr, g, d, "drift.G_A", base_dir, nullptr));

  const json* diff = find(root, "diffusion");
  spec.C = TimePath<MatrixField>(parse_matrix_field(diff ? find(*diff, "C") : nullptr, g, d, d, "diffusion.C"));
  spec.D = TimePath<MatrixField>(parse_matrix_field(diff ? find(*diff, "D") : nullptr, g, d, m, "diffusion.D"));
  spec.gamma = TimePath<VectorField>(
      parse_vector_field(diff ? find(*diff, "gamma") : nullptr, g, d, "diffusion.gamma"));
  spec.G_C = TimePath<MatrixKernel>(
      parse_kernel(diff ? find(*diff, "G_C") : nullptr, g, d, "diffusion.G_C", base_dir, nullptr));
  spec.theta = TimePath<VectorField>(
      parse_vector_field(diff ? find(*diff, "theta") : nullptr, g, d, "diffusion.theta"));

  const json* cost = find(root, "cost");
  MatrixField Q = parse_matrix_field(cost ? find(*cost, "Q") : nullptr, g, d, d, "cost.Q");
  spec.Q = TimePath<MatrixField>(Q);
  spec.G_Q = TimePath<MatrixKernel>(
      parse_kernel(cost ? find(*cost, "G_Q") : nullptr, g, d, "cost.G_Q", base_dir, &Q));
  if (cost != nullptr && find(*cost, "R") != nullptr) {
    spec.R = TimePath<MatrixField>(parse_matrix_field(find(*cost, "R"), g, m, m, "cost.R"));
  } else {
    spec.R = TimePath<MatrixField>(MatrixField::Constant(g, Eigen::MatrixXd::Identity(m, m)));
  }
  spec.I_off = TimePath<VectorField>(parse_vector_field(cost ? find(*cost, "I") : nullptr, g, m, "cost.I"));

  const json* term = find(root, "terminal");
  spec.H = parse_matrix_field(term ? find(*term, "H") : nullptr, g, d, d, "terminal.H");
  spec.G_H = parse_kernel(term ? find(*term, "G_H") : nullptr, g, d, "terminal.G_H", base_dir, &spec.H);

  const json* init = find(root, "initial");
  spec.xi_mean = parse_vector_field(init ? find(*init, "mean") : nullptr, g, d, "initial.mean");
  spec.xi_cov = parse_matrix_field(init ? find(*init, "cov") : nullptr, g, d, d, "initial.cov");

  if (const json* c = find(root, "coercivity_c")) {
    spec.coercivity_c = as_number(*c, "coercivity_c");
    if (!(spec.coercivity_c > 0.0)) fail("coercivity_c: must be positive");
  }

  validate(spec);  // ModelError (exit 1), unlike the ConfigError parse failures (exit 2)
  return spec;
}

}  // namespace

ProblemSpec parse_problem(const std::string& json_text, const std::string& base_dir) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  return parse_impl(root, base_dir);
}

ProblemSpec load_problem(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  std::ostringstream text;
  text << in.rdbuf();
  std::filesystem::path p(path);
  std::string base = p.has_parent_path() ? p.parent_path().string() : std::string(".");
  return parse_problem(text.str(), base);
}

}  // namespace mflq
