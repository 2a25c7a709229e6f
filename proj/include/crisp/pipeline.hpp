#pragma once

// End-to-end fitting: metric scale, filtering, segmentation, association,
// primitive fitting and contact completion. Plus the primitive file formats.

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "crisp/association.hpp"
#include "crisp/evaluation.hpp"
#include "crisp/ingest.hpp"
#include "crisp/primitive_fit.hpp"
#include "crisp/segmentation.hpp"

namespace crisp {

struct PipelineConfig {
  struct Scale {
    bool enabled = true;
    ScaleStatistic statistic = ScaleStatistic::Median;
    std::size_t min_pixels = 100;
  } scale;
  PointFilterOptions filter;
  struct Despike {
    int radius = 2;
    double tolerance = 0.05;
  } despike;
  struct Normals {
    double crease_angle_deg = 45.0;
    int smooth_radius = 2;
    double smooth_gate_deg = 30.0;
    double merge_angle_deg = 15.0;  ///< k-means clusters closer than this are one label
    int step = 2;                   ///< finite-difference stencil, pixels
  } normals;
  struct KMeans {
    int clusters = 6;
    int max_iterations = 100;
    double tolerance = 1e-6;
  } kmeans;
  struct Dbscan {
    double eps = 0.15;
    int min_points = 20;
    int min_segment_size = 200;
    bool scale_with_resolution = true;
  } dbscan;
  struct Association {
    std::vector<int> strides{1, 5};
    double min_overlap = 0.5;
    double min_angle_deg = 15.0;  ///< gamma_min = cos(min_angle_deg)
    double max_offset = 0.1;      ///< m, parallel-plane gap that blocks a merge
    OverlapMode mode = OverlapMode::MinSize;
  } association;
  struct Ransac {
    double inlier_tol = 0.02;
    int iterations = 500;
    std::size_t min_points = 50;
    std::size_t max_score_points = 20000;
  } ransac;
  struct Footprint {
    double fill_min = 0.6;
    double cell_size = 0.05;
    int max_depth = 3;
  } footprint;
  struct Contact {
    bool enabled = true;
    int window = 15;
    double min_confidence = 0.5;
    double max_speed = 0.3;
    double min_thickness = 0.05;
  } contact;
  struct Eval {
    double penetration_tolerance = 0.01;
    std::size_t gt_samples = 10000;
    int segment_length = 100;
    int min_tail = 10;
    bool energy_bonus = false;
  } eval;
  struct Seeds {
    std::uint64_t kmeans = 0;
    std::uint64_t ransac = 0;
    std::uint64_t sampling = 0;
  } seeds;

  /// Throws InvalidArgument naming the first field outside its range.
  void validate() const;
  /// Sets every seed to `seed`.
  void set_seed(std::uint64_t seed);
};

nlohmann::json to_json(const PipelineConfig& config);
/// Missing keys keep their current value; unknown keys are rejected.
void merge_json(PipelineConfig& config, const nlohmann::json& j);
PipelineConfig load_config(const std::filesystem::path& path);
/// FNV-1a 64 of the canonical JSON form, as 16 hex digits.
std::string config_hash(const PipelineConfig& config);

struct PixelRef {
  int frame = 0;
  int pixel = 0;
};

struct FittedPrimitive {
  Primitive primitive;
  int group = -1;  ///< -1 for contact-completed primitives
  std::size_t inliers = 0;
  double residual = 0.0;  ///< RMS distance of inliers to the observed face plane
};

struct GroupFit {
  int group = 0;
  std::vector<Vec3> points;
  std::vector<PixelRef> refs;
  std::vector<std::size_t> inliers;  ///< indices into points
  Plane3 plane;
  bool fitted = false;
};

struct FitResult {
  std::vector<FittedPrimitive> primitives;
  int group_count = 0;
  double scale = 1.0;
  std::size_t contact_events = 0;
  std::size_t skipped_events = 0;
  nlohmann::json timings = nlohmann::json::object();
  std::vector<GroupFit> groups;  ///< filled when requested
  std::optional<SegmentGraph> graph;  ///< filled when requested
};

struct FitOptions {
  bool keep_groups = false;
};

FitResult run_fit(const Dataset& dataset, const PipelineConfig& config, int workers = 1,
                  const FitOptions& options = {});

std::string to_string(Provenance p);
Provenance parse_provenance(const std::string& s);

/// Primitive list document: config, hash, group count and one record per
/// primitive (quaternion, matrix, center, extents, provenance, inliers,
/// residual).
nlohmann::json primitives_to_json(const FitResult& result, const PipelineConfig& config);
std::vector<Primitive> primitives_from_json(const nlohmann::json& doc);
nlohmann::json read_json_file(const std::filesystem::path& path);

void write_primitives_obj(std::span<const Primitive> primitives, const std::filesystem::path& path);
std::vector<Primitive> read_primitives_obj(const std::filesystem::path& path);

nlohmann::json sim_manifest(std::span<const Primitive> primitives, const std::string& hash);
std::vector<Primitive> primitives_from_sim_manifest(const nlohmann::json& manifest);

/// Surface samples of each primitive box at `density` points per m^2 (at
/// least one per box), primitive k drawn from stream (seed, k).
std::vector<Vec3> sample_primitives(std::span<const Primitive> primitives, double density, std::uint64_t seed);

/// One JSON array of [x, y, z] vertices per line, one line per frame.
std::vector<std::vector<Vec3>> read_body_vertices(const std::filesystem::path& path);

struct EvalInputs {
  std::vector<Primitive> primitives;
  std::optional<TriangleMesh> gt_scene;
  std::optional<MotionSequence> pred_motion;
  std::optional<MotionSequence> gt_motion;
  std::optional<std::vector<std::vector<Vec3>>> body_vertices;
  double fps = 30.0;
};

struct EvalOutput {
  nlohmann::json report;  ///< metrics lacking inputs are null
  std::vector<double> reward;  ///< per frame, pred tracked against gt with zero torque
};

EvalOutput evaluate(const EvalInputs& inputs, const PipelineConfig& config);

}  // namespace crisp
