#pragma once

#include <span>
#include <vector>

#include "crisp/geometry.hpp"

namespace crisp {

inline constexpr int kNoise = -1;

struct DbscanResult {
  std::vector<int> labels;  ///< cluster id per point, kNoise for noise
  int cluster_count = 0;
};

/// Density clustering with a deterministic border rule.
///
/// Neighborhoods are closed balls (|p - q|^2 <= eps^2) and include the point
/// itself; a point is core when its neighborhood holds at least min_points
/// points. Clusters are the eps-connected components of core points. A border
/// point joins the cluster of its lowest-index core neighbor. Cluster ids are
/// assigned in increasing order of each cluster's lowest core index, so the
/// output does not depend on traversal order.
///
/// Neighbor queries use a uniform grid of side eps/sqrt(3): any two points in
/// one cell are neighbors, so a cell holding min_points points makes all its
/// points core without distance tests.
DbscanResult dbscan(std::span<const Vec3> points, double eps, int min_points);

}  // namespace crisp
