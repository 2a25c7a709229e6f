#pragma once

// Plane and cuboid fitting for merged planar groups and for contact points.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "crisp/dataset.hpp"

namespace crisp {

struct RansacOptions {
  double inlier_tol = 0.02;
  int iterations = 500;
  std::uint64_t seed = 0;
  /// Hypotheses are scored on at most this many points (a fixed seeded
  /// subsample); final inliers are always taken over the full set.
  std::size_t max_score_points = 20000;
};

struct RansacResult {
  Plane3 plane;
  std::vector<std::size_t> inliers;
};

/// Best-count 3-point hypothesis, refit by total least squares on its
/// inliers; inliers are the points within inlier_tol of the refit plane.
/// Throws DegenerateInput when every sampled triple is collinear.
RansacResult ransac_plane(std::span<const Vec3> points, const RansacOptions& options);

struct Rect2 {
  double angle = 0.0;  ///< direction of the long axis, in [0, pi)
  Vec2 center = Vec2::Zero();
  Vec2 half_extents = Vec2::Zero();  ///< x >= y

  double area() const { return 4.0 * half_extents.x() * half_extents.y(); }
  Vec2 axis_x() const { return Vec2(std::cos(angle), std::sin(angle)); }
  Vec2 axis_y() const { return Vec2(-std::sin(angle), std::cos(angle)); }
};

/// Convex hull (monotone chain), counter-clockwise, collinear points dropped.
std::vector<Vec2> convex_hull(std::span<const Vec2> points);

/// Minimum-area enclosing rectangle by rotating calipers on the convex hull.
/// Equal half extents report the angle modulo pi/2.
Rect2 min_area_rect(std::span<const Vec2> points);

/// Orthonormal in-plane basis (u, w) with u x w = normal.
std::pair<Vec3, Vec3> plane_basis(const Vec3& normal);

struct BuildOptions {
  double min_thickness = 0.05;
  Provenance provenance = Provenance::Fitted;
  /// Direction into the solid; the face normal is flipped to agree with it.
  /// Unset keeps the plane's own normal.
  std::optional<Vec3> body_side;
};

/// Cuboid whose observed face lies on `plane`: in-plane axes and size from the
/// min-area rectangle of the projected inliers, thickness
/// max(2 max|distance|, min_thickness), body offset by half the thickness
/// along the (oriented) plane normal.
Primitive build_primitive(const Plane3& plane, std::span<const Vec3> inliers,
                          const BuildOptions& options = {});

struct SplitOptions {
  double fill_min = 0.6;
  double cell_size = 0.05;
  std::size_t min_points = 50;
  int max_depth = 3;
};

/// Fraction of occupancy-grid cells over the footprint rectangle that hold at
/// least one point.
double footprint_fill(const Primitive& prim, std::span<const Vec3> points, double cell_size);

/// Splits a footprint with fill below fill_min at the median along the long
/// axis and refits each half, recursively.
std::vector<Primitive> split_footprint(const Primitive& prim, std::span<const Vec3> inliers,
                                       const SplitOptions& options = {});

struct ContactFilterOptions {
  int window = 15;            ///< L, frames
  double min_confidence = 0.5;  ///< tau
  double max_speed = 0.3;       ///< nu, m/s
};

struct ContactEvent {
  int frame = 0;  ///< t*
  std::vector<Vec3> points;
  int window_begin = 0;  ///< first frame of the qualifying run
  int window_end = 0;    ///< last frame, inclusive
  /// A point on the human's side of the contact (the pelvis); the completed
  /// cuboid grows away from it.
  std::optional<Vec3> anchor;
};

/// Maximal runs of at least `window` frames whose peak confidence is >= tau
/// and body speed <= nu yield one event each, at the slowest frame of the run
/// (earliest on ties), carrying that frame's points with confidence >= tau.
std::vector<ContactEvent> filter_contacts(const ContactSequence& contacts,
                                          const ContactFilterOptions& options = {});

struct CompletionResult {
  std::vector<Primitive> primitives;
  std::vector<std::size_t> source_event;
  std::vector<std::size_t> inliers;  ///< RANSAC inlier count per primitive
  std::size_t skipped = 0;
};

/// RANSAC + cuboid per event on its contact points; degenerate events are
/// logged and skipped.
CompletionResult complete_from_contacts(std::span<const ContactEvent> events,
                                        const RansacOptions& ransac,
                                        double min_thickness = kMinContactThickness);

}  // namespace crisp
