#pragma once

#include <string>
#include <vector>

#include "mflq/kernel.hpp"

namespace mflq::graphon {

/// Scalar graphon built-ins, sampled at grid nodes into 1×1-block kernels.
/// All of them are symmetric by construction.

/// w(u,v) = value.
[[nodiscard]] MatrixKernel constant(const LabelGrid& grid, double value);

/// Step (stochastic-block-model) graphon: I is split into k communities and
/// w(u,v) = blocks[a][b] for u in community a, v in community b.  `cuts` are
/// the k−1 interior boundaries; equal-width communities when omitted.
/// `blocks` must be symmetric.
[[nodiscard]] MatrixKernel step(const LabelGrid& grid, const std::vector<std::vector<double>>& blocks,
                                const std::vector<double>& cuts = {});

/// w(u,v) = min(u,v).
[[nodiscard]] MatrixKernel min_uv(const LabelGrid& grid);

/// w(u,v) = exp(−|u−v| / length_scale).
[[nodiscard]] MatrixKernel exp_abs(const LabelGrid& grid, double length_scale);

/// Tabulated kernel from CSV with rows "i,j,b00,b01,..." (block entries in
/// row-major order); every (i,j) pair in [0,N)² must appear exactly once.
[[nodiscard]] MatrixKernel from_csv(const LabelGrid& grid, int block_rows, int block_cols,
                                    const std::string& path);

/// Writes the row-per-block CSV form read by from_csv.
void to_csv(const MatrixKernel& kernel, const std::string& path);

/// Lift a scalar (1×1-block) kernel to d×d blocks w(u,v)·I_d.
[[nodiscard]] MatrixKernel lift(const MatrixKernel& scalar_kernel, int d);

}  // namespace mflq::graphon
