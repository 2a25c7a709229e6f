#include "crisp/segmentation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "crisp/dbscan.hpp"
#include "crisp/parallel.hpp"
#include "crisp/rng.hpp"

namespace crisp {
namespace {

double deg2rad(double d) { return d * std::numbers::pi / 180.0; }

// Tangent along one image axis at pixel (u, v); (du, dv) is (s, 0) or (0, s).
bool axis_tangent(const PointMap& f, int width, int height, int u, int v, int du, int dv,
                  double cos_crease, Vec3& tangent) {
  const int extent = du ? width : height;
  const int pos = du ? u : v;
  const int step = du ? du : dv;
  if (extent <= step) return false;
  auto at = [&](int uu, int vv) { return static_cast<std::size_t>(vv) * width + uu; };
  const std::size_t c = at(u, v);
  const bool has_prev = pos >= step;
  const bool has_next = pos + step < extent;
  const std::size_t prev = has_prev ? at(u - du, v - dv) : c;
  const std::size_t next = has_next ? at(u + du, v + dv) : c;
  if ((has_prev && !f.valid[prev]) || (has_next && !f.valid[next])) return false;
  const Vec3 pc = f.points[c].cast<double>();
  if (has_prev && has_next) {
    const Vec3 fwd = f.points[next].cast<double>() - pc;
    const Vec3 bwd = pc - f.points[prev].cast<double>();
    const double nf = fwd.norm();
    const double nb = bwd.norm();
    if (!(nf > 0.0) || !(nb > 0.0)) return false;
    if (fwd.dot(bwd) < cos_crease * nf * nb) return false;
    tangent = fwd + bwd;
  } else if (has_next) {
    tangent = f.points[next].cast<double>() - pc;
  } else {
    tangent = pc - f.points[prev].cast<double>();
  }
  return true;
}

}  // namespace

NormalMap estimate_normals(const PointMap& frame, int width, int height, const Vec3& camera_center,
                           const NormalOptions& options) {
  NormalMap out;
  out.width = width;
  out.height = height;
  const std::size_t n = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  out.normals.assign(n, Eigen::Vector3f::Zero());
  out.valid.assign(n, 0);
  if (options.step < 1) throw Error(ErrorCode::InvalidArgument, "normal stencil step must be >= 1");
  const double cos_crease = std::cos(deg2rad(options.crease_angle_deg));
  const int s = options.step;
  for (int v = 0; v < height; ++v) {
    for (int u = 0; u < width; ++u) {
      const std::size_t i = static_cast<std::size_t>(v) * width + u;
      if (!frame.valid[i]) continue;
      Vec3 tu, tv;
      if (!axis_tangent(frame, width, height, u, v, s, 0, cos_crease, tu)) continue;
      if (!axis_tangent(frame, width, height, u, v, 0, s, cos_crease, tv)) continue;
      Vec3 nrm = tu.cross(tv);
      const double len = nrm.norm();
      if (!(len > 1e-12 * tu.norm() * tv.norm()) || !std::isfinite(len)) continue;
      nrm /= len;
      if (nrm.dot(camera_center - frame.points[i].cast<double>()) < 0.0) nrm = -nrm;
      out.normals[i] = nrm.cast<float>();
      out.valid[i] = 1;
    }
  }
  return out;
}

std::vector<NormalMap> estimate_normals(const PointMapSequence& points, const CameraTrack& cameras,
                                        const NormalOptions& options, int workers) {
  std::vector<NormalMap> out(points.frame_count());
  parallel_for(out.size(), workers, [&](std::size_t t) {
    out[t] = estimate_normals(points.frames[t], points.width, points.height, cameras.center(t), options);
  });
  return out;
}

NormalMap smooth_normals(const NormalMap& in, int radius, double gate_deg) {
  if (radius <= 0) return in;
  NormalMap out = in;
  const float gate = static_cast<float>(std::cos(deg2rad(gate_deg)));
  for (int v = 0; v < in.height; ++v) {
    for (int u = 0; u < in.width; ++u) {
      const std::size_t i = static_cast<std::size_t>(v) * in.width + u;
      if (!in.valid[i]) continue;
      const Eigen::Vector3f& center = in.normals[i];
      Eigen::Vector3f sum = Eigen::Vector3f::Zero();
      for (int vv = std::max(0, v - radius); vv <= std::min(in.height - 1, v + radius); ++vv) {
        for (int uu = std::max(0, u - radius); uu <= std::min(in.width - 1, u + radius); ++uu) {
          const std::size_t j = static_cast<std::size_t>(vv) * in.width + uu;
          if (in.valid[j] && in.normals[j].dot(center) >= gate) sum += in.normals[j];
        }
      }
      out.normals[i] = sum.normalized();
    }
  }
  return out;
}

NormalClustering cluster_normals(const NormalMap& normals, const KMeansOptions& options) {
  const int K = options.clusters;
  if (K < 1) throw Error(ErrorCode::InvalidArgument, "cluster count must be >= 1");
  std::vector<std::size_t> pixels;
  std::vector<Vec3> data;
  for (std::size_t i = 0; i < normals.valid.size(); ++i) {
    if (!normals.valid[i]) continue;
    pixels.push_back(i);
    data.push_back(normals.normals[i].cast<double>());
  }
  const std::size_t n = data.size();
  if (n < static_cast<std::size_t>(K)) {
    throw Error(ErrorCode::InsufficientPoints, "fewer valid normals than clusters");
  }

  // Farthest-point seeding in cosine distance.
  NormalClustering result;
  Rng rng(options.seed);
  result.centroids.push_back(data[rng.index(n)]);
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  while (result.centroids.size() < static_cast<std::size_t>(K)) {
    const Vec3& last = result.centroids.back();
    std::size_t best = 0;
    double best_d = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], 1.0 - data[i].dot(last));
      if (nearest[i] > best_d) {
        best_d = nearest[i];
        best = i;
      }
    }
    result.centroids.push_back(data[best]);
  }

  std::vector<int> assign(n, 0);
  for (int it = 0; it < options.max_iterations; ++it) {
    result.iterations = it + 1;
    std::vector<Vec3> sums(static_cast<std::size_t>(K), Vec3::Zero());
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double best_dot = data[i].dot(result.centroids[0]);
      for (int k = 1; k < K; ++k) {
        const double d = data[i].dot(result.centroids[static_cast<std::size_t>(k)]);
        if (d > best_dot) {
          best_dot = d;
          best = k;
        }
      }
      assign[i] = best;
      sums[static_cast<std::size_t>(best)] += data[i];
    }
    double motion = 0.0;
    for (std::size_t k = 0; k < static_cast<std::size_t>(K); ++k) {
      const double len = sums[k].norm();
      if (!(len > 0.0)) continue;  // empty cluster keeps its centroid
      const Vec3 c = sums[k] / len;
      motion = std::max(motion, (c - result.centroids[k]).norm());
      result.centroids[k] = c;
    }
    if (motion < options.tolerance) break;
  }

  // Final labels against the converged centroids.
  result.labels.assign(normals.valid.size(), -1);
  for (std::size_t i = 0; i < n; ++i) {
    int best = 0;
    double best_dot = data[i].dot(result.centroids[0]);
    for (int k = 1; k < K; ++k) {
      const double d = data[i].dot(result.centroids[static_cast<std::size_t>(k)]);
      if (d > best_dot) {
        best_dot = d;
        best = k;
      }
    }
    result.labels[pixels[i]] = best;
  }
  return result;
}

void merge_close_clusters(NormalClustering& clustering, const NormalMap& normals, double max_angle_deg) {
  const std::size_t K = clustering.centroids.size();
  const double min_dot = std::cos(max_angle_deg * std::numbers::pi / 180.0);
  std::vector<int> root(K);
  std::iota(root.begin(), root.end(), 0);
  // K is small; relabel to the smallest member until stable.
  for (bool changed = true; changed;) {
    changed = false;
    for (std::size_t a = 0; a < K; ++a) {
      for (std::size_t b = a + 1; b < K; ++b) {
        if (clustering.centroids[a].dot(clustering.centroids[b]) < min_dot) continue;
        const int r = std::min(root[a], root[b]);
        if (root[a] != r || root[b] != r) {
          root[a] = root[b] = r;
          changed = true;
        }
      }
    }
  }
  std::vector<Vec3> sums(K, Vec3::Zero());
  for (std::size_t i = 0; i < clustering.labels.size(); ++i) {
    int& l = clustering.labels[i];
    if (l < 0) continue;
    l = root[static_cast<std::size_t>(l)];
    sums[static_cast<std::size_t>(l)] += normals.normals[i].cast<double>();
  }
  for (std::size_t k = 0; k < K; ++k) {
    const auto r = static_cast<std::size_t>(root[k]);
    if (r == k && sums[k].norm() > 0.0) clustering.centroids[k] = sums[k].normalized();
  }
  for (std::size_t k = 0; k < K; ++k) clustering.centroids[k] = clustering.centroids[static_cast<std::size_t>(root[k])];
}

std::vector<Segment> split_spatial(int frame_index, const PointMap& frame, const NormalMap& normals,
                                   const std::vector<int>& labels, int clusters,
                                   const SpatialSplitOptions& options) {
  std::vector<Segment> out;
  std::vector<std::vector<int>> by_label(static_cast<std::size_t>(clusters));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= 0 && labels[i] < clusters && frame.valid[i]) {
      by_label[static_cast<std::size_t>(labels[i])].push_back(static_cast<int>(i));
    }
  }
  for (const auto& pixels : by_label) {
    if (pixels.size() < static_cast<std::size_t>(options.min_segment_size)) continue;
    std::vector<Vec3> pts;
    pts.reserve(pixels.size());
    for (int p : pixels) pts.push_back(frame.points[static_cast<std::size_t>(p)].cast<double>());
    const DbscanResult db = dbscan(pts, options.eps, options.min_points);
    std::vector<Segment> segs(static_cast<std::size_t>(db.cluster_count));
    for (std::size_t i = 0; i < pixels.size(); ++i) {
      if (db.labels[i] == kNoise) continue;
      segs[static_cast<std::size_t>(db.labels[i])].members.push_back(pixels[i]);
    }
    for (auto& s : segs) {
      if (s.members.size() < static_cast<std::size_t>(options.min_segment_size)) continue;
      s.frame = frame_index;
      Vec3 nsum = Vec3::Zero();
      Vec3 psum = Vec3::Zero();
      for (int p : s.members) {
        nsum += normals.normals[static_cast<std::size_t>(p)].cast<double>();
        psum += frame.points[static_cast<std::size_t>(p)].cast<double>();
      }
      s.mean_normal = nsum.normalized();
      s.centroid = psum / static_cast<double>(s.members.size());
      out.push_back(std::move(s));
    }
  }
  return out;
}

SpatialSplitOptions scale_for_resolution(SpatialSplitOptions options, int width, int height) {
  const double factor = static_cast<double>(width) * height / (256.0 * 256.0);
  options.min_points = std::max(3, static_cast<int>(std::lround(options.min_points * factor)));
  options.min_segment_size = std::max(10, static_cast<int>(std::lround(options.min_segment_size * factor)));
  return options;
}

}  // namespace crisp
