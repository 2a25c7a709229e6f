#pragma once

// Synthetic scenes with known geometry: ray-cast point maps, exact flows,
// scripted human motion and contact traces.

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "crisp/dataset.hpp"

namespace crisp {

inline constexpr int kNoHit = -1;
inline constexpr int kHumanHit = -2;

struct Aabb {
  Vec3 lo = Vec3::Zero();
  Vec3 hi = Vec3::Zero();
};

struct SceneSpec {
  /// Ground-truth primitives. Each is rendered as its observed face rectangle.
  std::vector<Primitive> primitives;
  std::vector<std::string> labels;
  /// Primitives present in the scene but never rendered.
  std::vector<std::uint8_t> hidden;
  CameraTrack cameras;
  int width = 256;
  int height = 256;
  double sigma = 0.0;             ///< range noise along each ray, m
  double outlier_fraction = 0.0;  ///< pixels replaced by a uniform depth
  double outlier_min_depth = 0.5;
  double outlier_max_depth = 8.0;
  std::uint64_t seed = 0;
  /// Per-frame human proxy boxes; they occlude the scene and provide the
  /// mask and mesh depth. Empty means no human in view.
  std::vector<Aabb> human;

  void validate() const;
  std::size_t frame_count() const { return cameras.poses.size(); }
};

struct RenderedScene {
  PointMapSequence points;
  /// Per frame and pixel: primitive index, kNoHit or kHumanHit.
  std::vector<std::vector<int>> ids;
  std::vector<Mask> outliers;
  HumanObservations human;
};

/// Nearest hit per pixel through the pinhole model, with Gaussian range noise
/// and uniform-depth outliers drawn from a stream keyed by (seed, frame, pixel).
RenderedScene render_pointmaps(const SceneSpec& spec, int workers = 1);

/// Noiseless world point seen through pixel `pixel` of frame `frame`, when the
/// pixel hits a primitive.
std::optional<Vec3> clean_point(const SceneSpec& spec, const RenderedScene& render, std::size_t frame,
                                int pixel);

/// Flow i -> j for every pair j - i in `strides`, from the noiseless points of
/// frame i. Covisible when the point projects inside frame j and the ray from
/// camera j reaches it unobstructed (1e-6 m tolerance). Human pixels are never
/// covisible.
std::vector<FlowField> exact_flows(const SceneSpec& spec, const RenderedScene& render,
                                   std::span<const int> strides, int workers = 1);

enum class Scenario { Walk, Sit, Stairs, Room };

Scenario parse_scenario(std::string_view name);
std::string_view to_string(Scenario scenario);

struct MotionAndContacts {
  MotionSequence motion;
  ContactSequence contacts;
};

/// Scripted motion over the scene's labeled primitives. Throws
/// ScenarioMismatch when a primitive the script needs is missing.
MotionAndContacts synth_motion_and_contacts(const SceneSpec& spec, Scenario scenario, int frames,
                                            double fps);

/// Axis-aligned body proxy per frame: joint bounds grown by `padding`.
std::vector<Aabb> human_boxes(const MotionSequence& motion, double padding = 0.12);

struct ScenarioOptions {
  int frames = 100;
  int width = 256;
  int height = 256;
  double sigma = 0.0;
  double outliers = 0.0;
  std::uint64_t seed = 0;
  double fps = 30.0;
  bool show_seat = false;  ///< sit: render the seat
  std::vector<int> strides{1, 5};
};

/// Primitives, labels and camera track for a scenario (no human yet).
SceneSpec scenario_scene(Scenario scenario, const ScenarioOptions& options);

struct SyntheticDataset {
  Scenario scenario = Scenario::Walk;
  SceneSpec spec;
  RenderedScene render;
  Dataset dataset;
};

SyntheticDataset make_synthetic(Scenario scenario, const ScenarioOptions& options, int workers = 1);

/// Writes the dataset plus a ground-truth sidecar under `dir`/gt: planes
/// (gt_planes.json), per-pixel ids (ids.i32) and outlier masks (outliers.u8),
/// the scene as boxes (gt_scene.obj) and the motion (gt_motion.txt).
void write_synthetic(const SyntheticDataset& data, const std::filesystem::path& dir);

/// Visible ground-truth planes as (normal, offset) with their primitive index.
std::vector<std::pair<std::size_t, Plane3>> rendered_planes(const SceneSpec& spec);

}  // namespace crisp
