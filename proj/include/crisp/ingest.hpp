#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>

#include "crisp/dataset.hpp"

namespace crisp {

/// Reads a dataset directory (or a path to its manifest.json). Every binary is
/// checked against the shapes declared in the manifest.
Dataset load_dataset(const std::filesystem::path& manifest_path);

/// Writes `dataset` in the layout load_dataset reads. Creates `dir`.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);

/// Throws ShapeMismatch / NonFiniteData on any inconsistency.
void validate_dataset(const Dataset& dataset);

// Motion text format: one line per frame, root pose (qw qx qy qz tx ty tz)
// followed by J x (px py pz qw qx qy qz vx vy vz wx wy wz).
MotionSequence read_motion(std::istream& in);
MotionSequence read_motion_file(const std::filesystem::path& path);
void write_motion(std::ostream& out, const MotionSequence& motion);
void write_motion_file(const std::filesystem::path& path, const MotionSequence& motion);

enum class ScaleStatistic { Median, Mean };

/// Factor s such that s * points matches the body-mesh depth on human pixels.
/// Throws InsufficientOverlap unless some frame has >= min_pixels usable
/// human pixels.
double recover_metric_scale(const PointMapSequence& points, const HumanObservations& human,
                            const CameraTrack& cameras,
                            ScaleStatistic statistic = ScaleStatistic::Median,
                            std::size_t min_pixels = 100);

/// Scales the world: point maps and camera translations by s.
void apply_metric_scale(PointMapSequence& points, CameraTrack& cameras, double s);

struct PointFilterOptions {
  double depth_percentile = 0.95;
  double max_pelvis_distance = 2.5;
};

/// Per frame, invalidates points deeper than the frame's nearest-rank depth
/// percentile or farther than max_pelvis_distance from the pelvis.
PointMapSequence filter_points(const PointMapSequence& points, const MotionSequence& motion,
                               const CameraTrack& cameras, const PointFilterOptions& options = {},
                               int workers = 1);

/// Replaces depth spikes: a valid pixel whose camera depth differs from the
/// median of the valid depths in its (2r+1)^2 window by more than `tolerance`
/// is moved along its ray to the median depth. Windows with fewer than half
/// of their pixels valid are left alone. radius 0 is a no-op.
void despike_points(PointMapSequence& points, const CameraTrack& cameras, int radius, double tolerance,
                    int workers = 1);

/// Invalidates pixels covered by the human mask.
void mask_out_human(PointMapSequence& points, const HumanObservations& human);

/// Nearest-rank percentile (1-based rank ceil(p * n)) of unsorted values.
double nearest_rank_percentile(std::vector<double> values, double p);

}  // namespace crisp
