#include "mflq/graphon.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace mflq::graphon {

namespace {

int community_of(double u, const std::vector<double>& cuts) {
  int c = 0;
  while (c < static_cast<int>(cuts.size()) && u >= cuts[static_cast<std::size_t>(c)]) ++c;
  return c;
}

}  // namespace

MatrixKernel constant(const LabelGrid& grid, double value) {
  return MatrixKernel::FromDense(
      grid, 1, 1, Eigen::MatrixXd::Constant(grid.size(), grid.size(), value));
}

MatrixKernel step(const LabelGrid& grid, const std::vector<std::vector<double>>& blocks,
                  const std::vector<double>& cuts) {
  const int k = static_cast<int>(blocks.size());
  if (k == 0) throw std::invalid_argument("graphon::step: empty block matrix");
  for (const auto& row : blocks)
    if (static_cast<int>(row.size()) != k)
      throw std::invalid_argument("graphon::step: block matrix must be square");
  for (int a = 0; a < k; ++a)
    for (int b = 0; b < k; ++b)
      if (blocks[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] !=
          blocks[static_cast<std::size_t>(b)][static_cast<std::size_t>(a)])
        throw std::invalid_argument("graphon::step: block matrix must be symmetric");

  std::vector<double> bounds = cuts;
  if (bounds.empty()) {
    for (int c = 1; c < k; ++c) bounds.push_back(static_cast<double>(c) / k);
  }
  if (static_cast<int>(bounds.size()) != k - 1 || !std::is_sorted(bounds.begin(), bounds.end()))
    throw std::invalid_argument("graphon::step: need k-1 sorted interior cuts");

  Eigen::MatrixXd w(grid.size(), grid.size());
  for (int i = 0; i < grid.size(); ++i) {
    const int a = community_of(grid.node(i), bounds);
    for (int j = 0; j < grid.size(); ++j) {
      const int b = community_of(grid.node(j), bounds);
      w(i, j) = blocks[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)];
    }
  }
  return MatrixKernel::FromDense(grid, 1, 1, std::move(w));
}

MatrixKernel min_uv(const LabelGrid& grid) {
  Eigen::MatrixXd w(grid.size(), grid.size());
  for (int i = 0; i < grid.size(); ++i)
    for (int j = 0; j < grid.size(); ++j) w(i, j) = std::min(grid.node(i), grid.node(j));
  return MatrixKernel::FromDense(grid, 1, 1, std::move(w));
}

MatrixKernel exp_abs(const LabelGrid& grid, double length_scale) {
  if (!(length_scale > 0.0))
    throw std::invalid_argument("graphon::exp_abs: length_scale must be positive");
  Eigen::MatrixXd w(grid.size(), grid.size());
  for (int i = 0; i < grid.size(); ++i)
    for (int j = 0; j < grid.size(); ++j)
      w(i, j) = std::exp(-std::abs(grid.node(i) - grid.node(j)) / length_scale);
  return MatrixKernel::FromDense(grid, 1, 1, std::move(w));
}

MatrixKernel from_csv(const LabelGrid& grid, int block_rows, int block_cols,
                      const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("graphon::from_csv: cannot open " + path);
  MatrixKernel kernel(grid, block_rows, block_cols);
  std::vector<char> seen(static_cast<std::size_t>(grid.size()) * grid.size(), 0);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    // skip a header row if present
    if (line.find_first_not_of("0123456789+-.eE, \t\r") != std::string::npos) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> row;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    if (static_cast<int>(row.size()) != 2 + block_rows * block_cols)
      throw std::runtime_error("graphon::from_csv: bad column count in " + path);
    const int i = static_cast<int>(row[0]);
    const int j = static_cast<int>(row[1]);
    if (i < 0 || i >= grid.size() || j < 0 || j >= grid.size())
      throw std::runtime_error("graphon::from_csv: index out of range in " + path);
    auto blk = kernel.block(i, j);
    for (int r = 0; r < block_rows; ++r)
      for (int c = 0; c < block_cols; ++c)
        blk(r, c) = row[static_cast<std::size_t>(2 + r * block_cols + c)];
    seen[static_cast<std::size_t>(i) * grid.size() + j] = 1;
  }
  for (char s : seen)
    if (!s) throw std::runtime_error("graphon::from_csv: missing (i,j) entries in " + path);
  return kernel;
}

void to_csv(const MatrixKernel& kernel, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("graphon::to_csv: cannot open " + path);
  out << "i,j";
  for (int r = 0; r < kernel.block_rows(); ++r)
    for (int c = 0; c < kernel.block_cols(); ++c) out << ",b" << r << c;
  out << "\n";
  char buf[32];
  for (int i = 0; i < kernel.grid().size(); ++i)
    for (int j = 0; j < kernel.grid().size(); ++j) {
      out << i << "," << j;
      const auto blk = kernel.block(i, j);
      for (int r = 0; r < kernel.block_rows(); ++r)
        for (int c = 0; c < kernel.block_cols(); ++c) {
          std::snprintf(buf, sizeof(buf), "%.17g", blk(r, c));
          out << "," << buf;
        }
      out << "\n";
    }
}

MatrixKernel lift(const MatrixKernel& scalar_kernel, int d) {
  if (scalar_kernel.block_rows() != 1 || scalar_kernel.block_cols() != 1)
    throw std::invalid_argument("graphon::lift: expects a scalar kernel");
  if (d == 1) return scalar_kernel;
  const int n = scalar_kernel.grid().size();
  MatrixKernel out(scalar_kernel.grid(), d, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      out.block(i, j) = scalar_kernel.dense()(i, j) * Eigen::MatrixXd::Identity(d, d);
  return out;
}

}  // namespace mflq::graphon
