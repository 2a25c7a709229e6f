#pragma once

// Reconstruction and motion metrics, tracking reward and policy features.

#include <Eigen/Core>

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "crisp/dataset.hpp"

namespace crisp {

/// Exact nearest-neighbor index over a fixed point set.
class KdTree {
 public:
  explicit KdTree(std::span<const Vec3> points);

  /// Index and squared distance of the nearest point; ties go to the lower index.
  std::pair<std::size_t, double> nearest(const Vec3& query) const;
  std::size_t size() const { return points_.size(); }

 private:
  struct Node {
    std::uint32_t begin, end;  // range in order_
    int axis;                  // -1 for a leaf
    double split;
    std::int32_t left, right;
  };
  std::int32_t build(std::uint32_t begin, std::uint32_t end);
  void search(std::int32_t node, const Vec3& q, std::size_t& best, double& best_d2) const;

  std::vector<Vec3> points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

struct ChamferResult {
  double recon_to_gt = 0.0;
  double gt_to_recon = 0.0;
  double bidirectional = 0.0;  ///< mean of the two one-way terms
};

/// One-way term: mean over `from` of the distance to the nearest point of `to`.
double chamfer_one_way(std::span<const Vec3> from, std::span<const Vec3> to);
ChamferResult chamfer(std::span<const Vec3> recon, std::span<const Vec3> gt);

/// Fraction of (frame, vertex) pairs whose signed distance to every primitive
/// is >= -tolerance. 1 for an empty primitive list.
double non_penetration(std::span<const std::vector<Vec3>> vertices_per_frame,
                       std::span<const Primitive> primitives, double tolerance = 0.01);

enum class AlignMode {
  FirstTwoFrames,  ///< W-MPJPE
  FullSegment,     ///< WA-MPJPE
};

struct SegmentOptions {
  int length = 100;
  int min_tail = 10;
};

/// Mean joint position error in mm over fixed-length segments, each rigidly
/// aligned (rotation + translation) to ground truth.
double world_mpjpe(const MotionSequence& pred, const MotionSequence& gt, AlignMode mode,
                   const SegmentOptions& segments = {});

struct TrajectoryMetrics {
  std::optional<double> rte;     ///< % of ground-truth path length; empty for a static path
  std::optional<double> jitter;  ///< mean |jerk| of pred joints, 10 m/s^3; empty below 4 frames
  std::optional<double> accel;   ///< mean acceleration error, mm/frame^2; empty below 3 frames
};

TrajectoryMetrics trajectory_metrics(const MotionSequence& pred, const MotionSequence& gt, double fps);

struct RewardWeights {
  double w_p = 2.5, w_r = 1.5, w_v = 0.5, w_w = 0.5, w_h = 1.0, w_e = 0.001;
  double a_p = 1.5, a_r = 0.3, a_v = 0.12, a_w = 0.05, a_h = 20.0;
  /// Add the energy term instead of subtracting it.
  bool energy_bonus = false;
};

/// Position, rotation, velocity and angular-velocity errors are stacked norms
/// over joints; root height is the root translation z.
double tracking_reward(const MotionFrame& sim, const MotionFrame& ref, std::span<const Vec3> torques,
                       std::span<const Vec3> dof_velocities, const RewardWeights& weights = {});

struct Features {
  Eigen::VectorXd state;
  Eigen::VectorXd goal;
};

/// State, per joint: quat_sub(q_j, q_root) [w x y z], R_root^T (p_j - p_root),
/// R_root^T v_j, R_root^T w_j  (13 values).
/// Goal, per target then per joint: quat_sub(q^_j, q_j), quat_sub(q^_j, q_root),
/// R_root^T (p^_j - p_j), R_root^T (p^_j - p_root)  (14 values).
Features featurize(const MotionFrame& state, std::span<const MotionFrame> targets);

inline constexpr int kStateFeaturesPerJoint = 13;
inline constexpr int kGoalFeaturesPerJoint = 14;

/// True iff some joint is farther than `threshold` from its reference.
bool early_termination(const MotionFrame& sim, const MotionFrame& ref, double threshold = 0.5);

struct PlaneMatch {
  std::size_t gt = 0;
  std::size_t recon = 0;
  double angle = 0.0;   ///< rad
  double offset = 0.0;  ///< m
};

/// Minimum-cost one-to-one assignment (Hungarian) between plane sets. Pairs
/// outside the angle/offset gates are never matched.
std::vector<PlaneMatch> match_planes(std::span<const Plane3> gt, std::span<const Plane3> recon,
                                     double max_angle, double max_offset);

/// Rectangular assignment minimizing total cost; result[row] = column or -1.
std::vector<int> hungarian(const Eigen::MatrixXd& cost);

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<Eigen::Vector3i> triangles;
};

/// OBJ (v / f, polygons fanned) or ASCII PLY, chosen by extension.
TriangleMesh load_mesh(const std::filesystem::path& path);
TriangleMesh primitives_mesh(std::span<const Primitive> primitives);
double mesh_area(const TriangleMesh& mesh);

/// Area-weighted uniform surface samples.
std::vector<Vec3> sample_surface(const TriangleMesh& mesh, std::size_t count, std::uint64_t seed);

}  // namespace crisp
