#include "crisp/primitive_fit.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "crisp/log.hpp"
#include "crisp/rng.hpp"

namespace crisp {

RansacResult ransac_plane(std::span<const Vec3> points, const RansacOptions& options) {
  const std::size_t n = points.size();
  if (n < 3) throw Error(ErrorCode::DegenerateInput, "RANSAC needs at least 3 points");

  std::vector<Vec3> scored;
  if (n <= options.max_score_points) {
    scored.assign(points.begin(), points.end());
  } else {
    const std::size_t m = options.max_score_points;
    scored.reserve(m);
    for (std::size_t k = 0; k < m; ++k) scored.push_back(points[k * n / m]);
  }

  Rng rng(options.seed);
  const double tol = options.inlier_tol;
  std::size_t best_count = 0;
  std::optional<Plane3> best;
  for (int it = 0; it < options.iterations; ++it) {
    const std::size_t i = rng.index(n);
    std::size_t j = rng.index(n);
    std::size_t k = rng.index(n);
    if (i == j || j == k || i == k) continue;
    const Vec3 e1 = points[j] - points[i];
    const Vec3 e2 = points[k] - points[i];
    const Vec3 nrm = e1.cross(e2);
    const double len = nrm.norm();
    if (!(len > 1e-12 * e1.norm() * e2.norm())) continue;
    const Plane3 hyp = Plane3::through(points[i], nrm / len);
    std::size_t count = 0;
    for (const auto& p : scored) count += std::abs(hyp.signed_distance(p)) <= tol ? 1 : 0;
    if (!best || count > best_count) {
      best = hyp;
      best_count = count;
    }
  }
  if (!best) throw Error(ErrorCode::DegenerateInput, "every RANSAC sample was collinear");

  auto collect = [&](const Plane3& plane) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < n; ++i) {
      if (std::abs(plane.signed_distance(points[i])) <= tol) idx.push_back(i);
    }
    return idx;
  };

  RansacResult result{*best, collect(*best)};
  std::vector<Vec3> inlier_points;
  inlier_points.reserve(result.inliers.size());
  for (std::size_t i : result.inliers) inlier_points.push_back(points[i]);
  try {
    const Plane3 refit = fit_plane_lsq<double>(std::span<const Vec3>(inlier_points));
    auto refit_inliers = collect(refit);
    if (refit_inliers.size() >= 3) {
      result.plane = refit;
      result.inliers = std::move(refit_inliers);
    }
  } catch (const Error&) {
    // Keep the hypothesis plane.
  }
  return result;
}

std::vector<Vec2> convex_hull(std::span<const Vec2> input) {
  std::vector<Vec2> pts(input.begin(), input.end());
  std::sort(pts.begin(), pts.end(), [](const Vec2& a, const Vec2& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return pts;
  auto cross = [](const Vec2& o, const Vec2& a, const Vec2& b) {
    return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
  };
  std::vector<Vec2> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0.0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, lower = k + 1; i-- > 0;) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0.0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

Rect2 min_area_rect(std::span<const Vec2> points) {
  const std::vector<Vec2> hull = convex_hull(points);
  const std::size_t h = hull.size();
  if (h < 3) throw Error(ErrorCode::DegenerateInput, "min-area rectangle needs 3 non-collinear points");

  auto edge_dir = [&](std::size_t i) { return (hull[(i + 1) % h] - hull[i]).normalized(); };
  auto next = [h](std::size_t i) { return (i + 1) % h; };

  // Calipers: farthest vertex along the inward normal, and extreme vertices
  // along the edge direction, all advancing monotonically around the hull.
  Vec2 e = edge_dir(0);
  Vec2 nrm(-e.y(), e.x());
  std::size_t top = 0, right = 0, left = 0;
  for (std::size_t i = 1; i < h; ++i) {
    if (nrm.dot(hull[i]) > nrm.dot(hull[top])) top = i;
    if (e.dot(hull[i]) > e.dot(hull[right])) right = i;
    if (e.dot(hull[i]) < e.dot(hull[left])) left = i;
  }

  double best_area = std::numeric_limits<double>::infinity();
  Rect2 best;
  for (std::size_t i = 0; i < h; ++i) {
    e = edge_dir(i);
    nrm = Vec2(-e.y(), e.x());
    for (std::size_t s = 0; s < h && nrm.dot(hull[next(top)]) >= nrm.dot(hull[top]); ++s) top = next(top);
    for (std::size_t s = 0; s < h && e.dot(hull[next(right)]) >= e.dot(hull[right]); ++s) right = next(right);
    for (std::size_t s = 0; s < h && e.dot(hull[next(left)]) <= e.dot(hull[left]); ++s) left = next(left);

    const Vec2& base = hull[i];
    const double e_min = e.dot(hull[left] - base);
    const double e_max = e.dot(hull[right] - base);
    const double height = nrm.dot(hull[top] - base);
    const double width = e_max - e_min;
    const double area = width * height;
    if (area < best_area) {
      best_area = area;
      best.center = base + e * (0.5 * (e_min + e_max)) + nrm * (0.5 * height);
      Vec2 axis = e;
      if (width >= height) {
        best.half_extents = Vec2(0.5 * width, 0.5 * height);
      } else {
        axis = nrm;
        best.half_extents = Vec2(0.5 * height, 0.5 * width);
      }
      best.angle = std::atan2(axis.y(), axis.x());
    }
  }
  if (!(best.half_extents.y() > 0.0)) {
    throw Error(ErrorCode::DegenerateInput, "points are collinear");
  }

  constexpr double pi = std::numbers::pi;
  double a = best.angle;
  if (a < 0.0) a += pi;
  if (a >= pi) a -= pi;
  const double hx = best.half_extents.x();
  if (std::abs(hx - best.half_extents.y()) <= 1e-12 * std::max(hx, 1.0)) a = std::fmod(a, pi / 2);
  // Rounding can leave a value a hair below the period.
  if (pi - a < 1e-12 || (std::abs(hx - best.half_extents.y()) <= 1e-12 * std::max(hx, 1.0) &&
                         pi / 2 - a < 1e-12)) {
    a = 0.0;
  }
  best.angle = a;
  return best;
}

std::pair<Vec3, Vec3> plane_basis(const Vec3& normal) {
  const Vec3 a = normal.cwiseAbs();
  Vec3 seed = Vec3::UnitX();
  if (a.y() < a.x() && a.y() <= a.z()) seed = Vec3::UnitY();
  else if (a.z() < a.x() && a.z() < a.y()) seed = Vec3::UnitZ();
  const Vec3 u = seed.cross(normal).normalized();
  const Vec3 w = normal.cross(u);
  return {u, w};
}

Primitive build_primitive(const Plane3& plane, std::span<const Vec3> inliers, const BuildOptions& options) {
  if (inliers.size() < 3) throw Error(ErrorCode::DegenerateInput, "cuboid needs at least 3 inliers");
  const Vec3 origin = plane.normal() * plane.offset();
  Vec3 n = plane.normal();
  if (options.body_side && n.dot(*options.body_side) < 0.0) n = -n;
  const auto [u, w] = plane_basis(n);

  std::vector<Vec2> flat;
  flat.reserve(inliers.size());
  double max_dist = 0.0;
  for (const auto& p : inliers) {
    const Vec3 d = p - origin;
    flat.emplace_back(u.dot(d), w.dot(d));
    max_dist = std::max(max_dist, std::abs(plane.signed_distance(p)));
  }
  const Rect2 rect = min_area_rect(flat);

  const Vec3 x = std::cos(rect.angle) * u + std::sin(rect.angle) * w;
  const Vec3 y = n.cross(x);
  Mat3 rotation;
  rotation << x, y, n;
  const double thickness = std::max(2.0 * max_dist, options.min_thickness);
  const Vec3 face_center = origin + rect.center.x() * u + rect.center.y() * w;
  const Vec3 center = face_center + 0.5 * thickness * n;
  const Vec3 extents(2.0 * rect.half_extents.x(), 2.0 * rect.half_extents.y(), thickness);
  return Primitive(rotation, center, extents, options.provenance);
}

double footprint_fill(const Primitive& prim, std::span<const Vec3> points, double cell_size) {
  const Vec3 ext = prim.extents();
  const int nx = std::max(1, static_cast<int>(std::ceil(ext.x() / cell_size)));
  const int ny = std::max(1, static_cast<int>(std::ceil(ext.y() / cell_size)));
  std::vector<std::uint8_t> occupied(static_cast<std::size_t>(nx) * ny, 0);
  for (const auto& p : points) {
    const Vec3 l = prim.to_local(p);
    const int ix = std::clamp(static_cast<int>(std::floor((l.x() / ext.x() + 0.5) * nx)), 0, nx - 1);
    const int iy = std::clamp(static_cast<int>(std::floor((l.y() / ext.y() + 0.5) * ny)), 0, ny - 1);
    occupied[static_cast<std::size_t>(iy) * nx + ix] = 1;
  }
  const auto count = std::count(occupied.begin(), occupied.end(), std::uint8_t{1});
  return static_cast<double>(count) / static_cast<double>(occupied.size());
}

namespace {

void split_recursive(const Primitive& prim, std::vector<Vec3> inliers, const SplitOptions& options,
                     int depth, std::vector<Primitive>& out) {
  if (depth >= options.max_depth ||
      footprint_fill(prim, inliers, options.cell_size) >= options.fill_min) {
    out.push_back(prim);
    return;
  }
  const Vec3 axis = prim.rotation().col(0);
  std::sort(inliers.begin(), inliers.end(),
            [&axis](const Vec3& a, const Vec3& b) { return axis.dot(a) < axis.dot(b); });
  const std::size_t half = inliers.size() / 2;
  if (half < options.min_points || inliers.size() - half < options.min_points) {
    out.push_back(prim);
    return;
  }
  std::vector<Vec3> lower(inliers.begin(), inliers.begin() + static_cast<std::ptrdiff_t>(half));
  std::vector<Vec3> upper(inliers.begin() + static_cast<std::ptrdiff_t>(half), inliers.end());
  try {
    const BuildOptions build{kMinContactThickness, prim.provenance(), prim.normal()};
    const Primitive a = build_primitive(fit_plane_lsq<double>(lower), lower, build);
    const Primitive b = build_primitive(fit_plane_lsq<double>(upper), upper, build);
    split_recursive(a, std::move(lower), options, depth + 1, out);
    split_recursive(b, std::move(upper), options, depth + 1, out);
  } catch (const Error&) {
    out.push_back(prim);
  }
}

}  // namespace

std::vector<Primitive> split_footprint(const Primitive& prim, std::span<const Vec3> inliers,
                                       const SplitOptions& options) {
  std::vector<Primitive> out;
  split_recursive(prim, std::vector<Vec3>(inliers.begin(), inliers.end()), options, 0, out);
  return out;
}

std::vector<ContactEvent> filter_contacts(const ContactSequence& contacts,
                                          const ContactFilterOptions& options) {
  std::vector<ContactEvent> events;
  const int T = static_cast<int>(contacts.frames.size());
  auto qualifies = [&](int t) {
    const auto& f = contacts.frames[static_cast<std::size_t>(t)];
    return f.max_confidence() >= options.min_confidence && f.body_speed <= options.max_speed;
  };
  int t = 0;
  while (t < T) {
    if (!qualifies(t)) {
      ++t;
      continue;
    }
    const int begin = t;
    while (t < T && qualifies(t)) ++t;
    const int end = t - 1;
    if (end - begin + 1 < options.window) continue;
    int best = begin;
    for (int s = begin + 1; s <= end; ++s) {
      if (contacts.frames[static_cast<std::size_t>(s)].body_speed <
          contacts.frames[static_cast<std::size_t>(best)].body_speed) {
        best = s;
      }
    }
    ContactEvent ev;
    ev.frame = best;
    ev.window_begin = begin;
    ev.window_end = end;
    for (const auto& p : contacts.frames[static_cast<std::size_t>(best)].points) {
      if (p.confidence >= options.min_confidence) ev.points.push_back(p.position);
    }
    events.push_back(std::move(ev));
  }
  return events;
}

CompletionResult complete_from_contacts(std::span<const ContactEvent> events, const RansacOptions& ransac,
                                        double min_thickness) {
  CompletionResult result;
  for (std::size_t e = 0; e < events.size(); ++e) {
    const auto& ev = events[e];
    try {
      RansacOptions opts = ransac;
      opts.seed = stream_key(ransac.seed, 0xC0417AC7ull, e);
      const RansacResult fit = ransac_plane(ev.points, opts);
      std::vector<Vec3> inliers;
      for (std::size_t i : fit.inliers) inliers.push_back(ev.points[i]);
      BuildOptions build{std::max(min_thickness, kMinContactThickness), Provenance::ContactCompleted, {}};
      if (ev.anchor) build.body_side = -fit.plane.signed_distance(*ev.anchor) * fit.plane.normal();
      result.primitives.push_back(build_primitive(fit.plane, inliers, build));
      result.source_event.push_back(e);
      result.inliers.push_back(inliers.size());
    } catch (const Error& err) {
      ++result.skipped;
      log::warn("contact", "skipping degenerate contact event",
                {{"frame", ev.frame}, {"points", ev.points.size()}, {"reason", err.what()}});
    }
  }
  return result;
}

}  // namespace crisp
