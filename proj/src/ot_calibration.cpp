#include "dmc/ot_calibration.hpp"

#include <algorithm>

namespace dmc {

namespace {

void require_same_dim(const GaussianStat& a, const GaussianStat& b) {
  validate_stat(a, 1e-10);
  validate_stat(b, 1e-10);
  if (a.dim() != b.dim()) throw InvalidInput("dimension mismatch");
}

void require_map_dim(const TransportMap& map, const GaussianStat& stat) {
  if (map.linear.rows() != map.dim() || map.linear.cols() != map.dim()) {
    throw InvalidInput("transport map is not square");
  }
  if (stat.dim() != map.dim()) throw InvalidInput("dimension mismatch");
}

}  // namespace

TransportMap TransportMap::identity(Eigen::Index d) {
  return {Matrix::Identity(d, d), Vector::Zero(d)};
}

double w2_distance_sq(const GaussianStat& a, const GaussianStat& b) {
  require_same_dim(a, b);
  const Matrix root_a = spd_sqrt(a.covariance, 0.0);
  // The cross term is PSD; no floor so tiny-variance Gaussians stay exact.
  const Matrix cross = spd_sqrt(symmetrize(root_a * b.covariance * root_a), 0.0);
  const double trace_term = a.covariance.trace() + b.covariance.trace() - 2.0 * cross.trace();
  return std::max(0.0, (a.mean - b.mean).squaredNorm() + trace_term);
}

TransportMap ot_map(const GaussianStat& pre, const GaussianStat& post) {
  require_same_dim(pre, post);
  const Eigen::SelfAdjointEigenSolver<Matrix> check(pre.covariance, Eigen::EigenvaluesOnly);
  if (check.info() != Eigen::Success || !(check.eigenvalues().minCoeff() > 0.0)) {
    throw NumericalError("degenerate source");
  }
  const Matrix root = spd_sqrt(pre.covariance);
  const Matrix inv_root = spd_inv_sqrt(pre.covariance);
  const Matrix middle = spd_sqrt(symmetrize(root * post.covariance * root), 0.0);

  TransportMap map;
  map.linear = symmetrize(inv_root * middle * inv_root);
  map.offset = post.mean - map.linear * pre.mean;
  return map;
}

GaussianStat apply_map_to_stat(const TransportMap& map, const GaussianStat& stat) {
  require_map_dim(map, stat);
  GaussianStat out;
  out.mean = map.linear * stat.mean + map.offset;
  out.covariance = symmetrize(map.linear * stat.covariance * map.linear.transpose());
  out.count = stat.count;
  return out;
}

ClassMemory calibrate_memory(const TransportMap& map, const ClassMemory& memory) {
  ClassMemory calibrated;
  for (const auto& [cls, stat] : memory) {
    calibrated.emplace(cls, apply_map_to_stat(map, stat));
  }
  return calibrated;
}

TransportMap ot_map_per_class_averaged(const std::vector<GaussianStat>& pre_stats,
                                       const std::vector<GaussianStat>& post_stats) {
  if (pre_stats.size() != post_stats.size()) {
    throw InvalidInput("pre/post statistic lists differ in length");
  }
  if (pre_stats.empty()) throw InvalidInput("no class statistics to map");

  TransportMap avg = ot_map(pre_stats.front(), post_stats.front());
  for (std::size_t i = 1; i < pre_stats.size(); ++i) {
    const TransportMap m = ot_map(pre_stats[i], post_stats[i]);
    avg.linear += m.linear;
    avg.offset += m.offset;
  }
  const double k = static_cast<double>(pre_stats.size());
  avg.linear = symmetrize(avg.linear / k);
  avg.offset /= k;
  return avg;
}

TransportMap compose(const TransportMap& first, const TransportMap& second) {
  if (first.dim() != second.dim()) throw InvalidInput("dimension mismatch");
  return {second.linear * first.linear, second.linear * first.offset + second.offset};
}

}  // namespace dmc
