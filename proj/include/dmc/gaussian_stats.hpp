#pragma once

#include "dmc/types.hpp"

#include <cstddef>
#include <vector>

namespace dmc {

/// Mean, covariance and sample count of one class's feature distribution.
struct GaussianStat {
  Vector mean;
  Matrix covariance;
  std::size_t count = 0;

  std::ptrdiff_t dim() const { return mean.size(); }
};

/// Throws InvalidInput unless the dimensions agree and the covariance is
/// symmetric within `sym_tol` (absolute, elementwise).
void validate_stat(const GaussianStat& stat, double sym_tol = 1e-12);

/// Ledoit-Wolf shrinkage intensity toward (trace(S)/d)·I, where S is the
/// 1/n sample covariance of `features` (rows are samples). Always in [0, 1];
/// exactly 1 when n == 1 or S already equals its target.
double ledoit_wolf_weight(const Matrix& features);

/// Sample mean plus Ledoit-Wolf shrunk covariance. A ridge of kEigenFloor·I
/// is added so the result is strictly positive definite even when the
/// shrunk estimate is singular (e.g. a single sample).
GaussianStat estimate_gaussian(const Matrix& features);

/// Symmetric square root through an eigendecomposition. Eigenvalues below
/// `floor` are raised to `floor` first; pass 0 to only clip negatives.
Matrix spd_sqrt(const Matrix& m, double floor = kEigenFloor);

/// Inverse symmetric square root; same flooring rule as spd_sqrt.
Matrix spd_inv_sqrt(const Matrix& m, double floor = kEigenFloor);

/// n i.i.d. rows from N(mean, covariance) using a Cholesky factor.
Matrix sample_gaussian(const GaussianStat& stat, std::size_t n, Rng& rng);

/// Arithmetic mean of means and of covariances; counts are summed.
GaussianStat average_stats(const std::vector<GaussianStat>& stats);

Matrix symmetrize(const Matrix& m);

}  // namespace dmc
