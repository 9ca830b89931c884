#include "dmc/gaussian_stats.hpp"

#include <algorithm>
#include <cmath>

namespace dmc {

namespace {

void require_samples(const Matrix& features) {
  if (features.rows() == 0 || features.cols() == 0) {
    throw InvalidInput("no samples");
  }
  if (!features.allFinite()) {
    throw InvalidInput("invalid feature");
  }
}

Matrix centered(const Matrix& features) {
  const Eigen::RowVectorXd mean = features.colwise().mean();
  return features.rowwise() - mean;
}

double max_asymmetry(const Matrix& m) {
  return (m - m.transpose()).cwiseAbs().maxCoeff();
}

Eigen::SelfAdjointEigenSolver<Matrix> eigen_of(const Matrix& m) {
  if (m.rows() != m.cols() || m.rows() == 0) {
    throw InvalidInput("matrix must be square and non-empty");
  }
  if (!m.allFinite()) {
    throw InvalidInput("matrix has non-finite entries");
  }
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if (max_asymmetry(m) > 1e-8 * scale) {
    throw InvalidInput("not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> solver(symmetrize(m));
  if (solver.info() != Eigen::Success) {
    throw NumericalError("eigendecomposition failed");
  }
  return solver;
}

template <typename Fn>
Matrix spectral_apply(const Matrix& m, double floor, Fn&& fn) {
  const auto solver = eigen_of(m);
  Vector values = solver.eigenvalues();
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    values[i] = fn(std::max(values[i], floor));
  }
  const Matrix& vecs = solver.eigenvectors();
  return symmetrize(vecs * values.asDiagonal() * vecs.transpose());
}

}  // namespace

Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

void validate_stat(const GaussianStat& stat, double sym_tol) {
  const auto d = stat.mean.size();
  if (d == 0 || stat.covariance.rows() != d || stat.covariance.cols() != d) {
    throw InvalidInput("dimension mismatch between mean and covariance");
  }
  if (!stat.mean.allFinite() || !stat.covariance.allFinite()) {
    throw InvalidInput("statistic has non-finite entries");
  }
  if (max_asymmetry(stat.covariance) > sym_tol) {
    throw InvalidInput("covariance not symmetric");
  }
}

double ledoit_wolf_weight(const Matrix& features) {
  require_samples(features);
  const double n = static_cast<double>(features.rows());
  const double d = static_cast<double>(features.cols());
  if (features.rows() == 1) return 1.0;

  const Matrix x = centered(features);
  const Matrix s = (x.transpose() * x) / n;
  const double mu = s.trace() / d;

  // Squared distance of S from its target.
  Matrix diff = s;
  diff.diagonal().array() -= mu;
  const double dist_sq = diff.squaredNorm();
  if (dist_sq <= 0.0) return 1.0;

  // (1/n²) Σ_k ‖x_k x_kᵀ − S‖²_F, expanded so no d×d temporaries per sample.
  const double fourth = x.rowwise().squaredNorm().array().square().sum();
  const double scatter_var = std::max(0.0, (fourth - n * s.squaredNorm()) / (n * n));

  return std::clamp(std::min(scatter_var, dist_sq) / dist_sq, 0.0, 1.0);
}

GaussianStat estimate_gaussian(const Matrix& features) {
  require_samples(features);
  const double n = static_cast<double>(features.rows());
  const auto d = features.cols();

  GaussianStat stat;
  stat.mean = features.colwise().mean().transpose();
  const Matrix x = centered(features);
  const Matrix s = (x.transpose() * x) / n;
  const double lambda = ledoit_wolf_weight(features);
  const double mu = s.trace() / static_cast<double>(d);

  Matrix cov = (1.0 - lambda) * s;
  cov.diagonal().array() += lambda * mu + kEigenFloor;
  stat.covariance = symmetrize(cov);
  stat.count = features.rows();
  return stat;
}

Matrix spd_sqrt(const Matrix& m, double floor) {
  return spectral_apply(m, std::max(floor, 0.0), [](double v) { return std::sqrt(v); });
}

Matrix spd_inv_sqrt(const Matrix& m, double floor) {
  return spectral_apply(m, std::max(floor, 0.0), [](double v) {
    if (v <= 0.0) throw NumericalError("singular matrix in inverse square root");
    return 1.0 / std::sqrt(v);
  });
}

Matrix sample_gaussian(const GaussianStat& stat, std::size_t n, Rng& rng) {
  validate_stat(stat, 1e-10);
  if (n == 0) throw InvalidInput("sample count must be positive");
  const auto d = stat.dim();

  Eigen::LLT<Matrix> llt(stat.covariance);
  if (llt.info() != Eigen::Success) {
    Matrix jittered = stat.covariance;
    jittered.diagonal().array() += 1e-8;
    llt.compute(jittered);
    if (llt.info() != Eigen::Success) throw NumericalError("degenerate covariance");
  }
  const Matrix factor = llt.matrixL();

  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix z(static_cast<Eigen::Index>(n), d);
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    for (Eigen::Index j = 0; j < d; ++j) z(i, j) = normal(rng);
  }
  Matrix out = z * factor.transpose();
  out.rowwise() += stat.mean.transpose();
  return out;
}

GaussianStat average_stats(const std::vector<GaussianStat>& stats) {
  if (stats.empty()) throw InvalidInput("cannot average an empty list of statistics");
  const auto d = stats.front().dim();
  GaussianStat avg;
  avg.mean = Vector::Zero(d);
  avg.covariance = Matrix::Zero(d, d);
  for (const auto& s : stats) {
    if (s.dim() != d || s.covariance.rows() != d || s.covariance.cols() != d) {
      throw InvalidInput("dimension mismatch in average_stats");
    }
    avg.mean += s.mean;
    avg.covariance += s.covariance;
    avg.count += s.count;
  }
  const double k = static_cast<double>(stats.size());
  avg.mean /= k;
  avg.covariance = symmetrize(avg.covariance / k);
  return avg;
}

}  // namespace dmc
