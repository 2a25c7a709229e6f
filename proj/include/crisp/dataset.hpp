#pragma once

// In-memory form of a pipeline input bundle: organized point maps, optical
// flows, camera track, human motion and contact traces.

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <vector>

#include "crisp/geometry.hpp"

namespace crisp {

using Mask = std::vector<std::uint8_t>;

/// One organized H x W point grid in world coordinates (row-major).
struct PointMap {
  std::vector<Eigen::Vector3f> points;
  Mask valid;
  /// Depth cut recorded by filter_points; reapplying the filter reuses it.
  std::optional<double> depth_cut;

  std::size_t valid_count() const;
};

struct PointMapSequence {
  int width = 0;
  int height = 0;
  std::vector<PointMap> frames;

  std::size_t frame_count() const { return frames.size(); }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }
  int pixel_index(int u, int v) const { return v * width + u; }
};

/// Dense flow from frame `source` to frame `target`; covisibility is indexed by
/// source pixel.
struct FlowField {
  int source = 0;
  int target = 0;
  int width = 0;
  int height = 0;
  std::vector<Eigen::Vector2f> flow;
  Mask covisible;
};

struct JointState {
  Vec3 position = Vec3::Zero();
  UnitQuat rotation;
  Vec3 linear_velocity = Vec3::Zero();
  Vec3 angular_velocity = Vec3::Zero();
};

struct MotionFrame {
  SE3 root;
  std::vector<JointState> joints;

  /// Pelvis is the root translation.
  const Vec3& pelvis() const { return root.translation; }
};

struct MotionSequence {
  std::vector<MotionFrame> frames;

  std::size_t frame_count() const { return frames.size(); }
  std::size_t joint_count() const { return frames.empty() ? 0 : frames.front().joints.size(); }
};

struct ContactPoint {
  int vertex_id = 0;
  double confidence = 0.0;
  Vec3 position = Vec3::Zero();
};

struct ContactFrame {
  std::vector<ContactPoint> points;
  double body_speed = 0.0;

  double max_confidence() const;
};

struct ContactSequence {
  std::vector<ContactFrame> frames;
};

/// Pinhole intrinsics plus camera-to-world poses, OpenCV axes (x right,
/// y down, z forward). Pixel (u, v) is the center of column u, row v.
struct CameraTrack {
  Mat3 intrinsics = Mat3::Identity();
  std::vector<SE3> poses;

  Vec3 center(std::size_t frame) const { return poses[frame].translation; }
  /// World direction (not normalized) of the ray through pixel (u, v).
  Vec3 ray_direction(std::size_t frame, double u, double v) const;
  /// Depth along the optical axis of a world point.
  double depth(std::size_t frame, const Vec3& world) const;
  /// Pixel coordinates of a world point; nullopt when behind the camera.
  std::optional<Vec2> project(std::size_t frame, const Vec3& world) const;
};

/// Human observations used for metric scale recovery: per-frame body mask and
/// the body-mesh camera depth rendered per pixel (0 where the mesh is absent).
struct HumanObservations {
  std::vector<Mask> masks;
  std::vector<std::vector<float>> mesh_depth;

  bool empty() const { return masks.empty(); }
};

struct Dataset {
  PointMapSequence points;
  std::vector<FlowField> flows;
  CameraTrack cameras;
  MotionSequence motion;
  ContactSequence contacts;
  HumanObservations human;
  double fps = 30.0;
};

}  // namespace crisp
