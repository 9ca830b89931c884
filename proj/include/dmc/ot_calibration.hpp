#pragma once

#include "dmc/gaussian_stats.hpp"

#include <map>
#include <vector>

namespace dmc {

using ClassMemory = std::map<ClassId, GaussianStat>;

/// Affine map x ↦ linear·x + offset. `linear` is symmetric positive
/// definite when produced by ot_map.
struct TransportMap {
  Matrix linear;
  Vector offset;

  static TransportMap identity(Eigen::Index d);
  Eigen::Index dim() const { return offset.size(); }
};

/// Squared 2-Wasserstein (Bures) distance between two Gaussians, clamped
/// at zero.
double w2_distance_sq(const GaussianStat& a, const GaussianStat& b);

/// Closed-form Monge map pushing N(pre) onto N(post).
TransportMap ot_map(const GaussianStat& pre, const GaussianStat& post);

/// Pushforward of a Gaussian through an affine map; the covariance is
/// re-symmetrized after the congruence.
GaussianStat apply_map_to_stat(const TransportMap& map, const GaussianStat& stat);

/// Applies `map` to every stored class. All-or-nothing: the input memory is
/// never modified and no partial result escapes on error.
ClassMemory calibrate_memory(const TransportMap& map, const ClassMemory& memory);

/// Elementwise average of per-class OT parameters (ablation variant).
TransportMap ot_map_per_class_averaged(const std::vector<GaussianStat>& pre_stats,
                                       const std::vector<GaussianStat>& post_stats);

/// The map equivalent to applying `first` then `second`.
TransportMap compose(const TransportMap& first, const TransportMap& second);

}  // namespace dmc
