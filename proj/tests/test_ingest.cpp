#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "crisp/ingest.hpp"
#include "crisp/synth.hpp"
#include "support.hpp"

using namespace crisp;
namespace fs = std::filesystem;

namespace {

SyntheticDataset stairs(double sigma, double outliers) {
  ScenarioOptions o;
  o.frames = 10;
  o.width = 64;
  o.height = 64;
  o.sigma = sigma;
  o.outliers = outliers;
  return make_synthetic(Scenario::Stairs, o);
}

const SyntheticDataset& small_stairs() {
  static const SyntheticDataset data = stairs(0.002, 0.05);
  return data;
}

const SyntheticDataset& clean_stairs() {
  static const SyntheticDataset data = stairs(0.0, 0.0);
  return data;
}

bool same_motion(const MotionSequence& a, const MotionSequence& b) {
  if (a.frame_count() != b.frame_count()) return false;
  for (std::size_t t = 0; t < a.frame_count(); ++t) {
    const auto& fa = a.frames[t];
    const auto& fb = b.frames[t];
    if (fa.root.translation != fb.root.translation) return false;
    if (fa.root.rotation.quaternion().coeffs() != fb.root.rotation.quaternion().coeffs()) return false;
    if (fa.joints.size() != fb.joints.size()) return false;
    for (std::size_t j = 0; j < fa.joints.size(); ++j) {
      const auto& x = fa.joints[j];
      const auto& y = fb.joints[j];
      if (x.position != y.position || x.linear_velocity != y.linear_velocity ||
          x.angular_velocity != y.angular_velocity ||
          x.rotation.quaternion().coeffs() != y.rotation.quaternion().coeffs()) {
        return false;
      }
    }
  }
  return true;
}

bool same_dataset(const Dataset& a, const Dataset& b) {
  if (a.points.width != b.points.width || a.points.height != b.points.height) return false;
  if (a.points.frame_count() != b.points.frame_count()) return false;
  for (std::size_t t = 0; t < a.points.frame_count(); ++t) {
    if (a.points.frames[t].points != b.points.frames[t].points) return false;
    if (a.points.frames[t].valid != b.points.frames[t].valid) return false;
  }
  if (a.flows.size() != b.flows.size()) return false;
  for (std::size_t k = 0; k < a.flows.size(); ++k) {
    const auto& x = a.flows[k];
    const auto& y = b.flows[k];
    if (x.source != y.source || x.target != y.target || x.flow != y.flow || x.covisible != y.covisible) return false;
  }
  if (a.cameras.intrinsics != b.cameras.intrinsics) return false;
  for (std::size_t t = 0; t < a.cameras.poses.size(); ++t) {
    if (a.cameras.poses[t].translation != b.cameras.poses[t].translation) return false;
    if (a.cameras.poses[t].rotation.quaternion().coeffs() != b.cameras.poses[t].rotation.quaternion().coeffs()) {
      return false;
    }
  }
  if (!same_motion(a.motion, b.motion)) return false;
  if (a.contacts.frames.size() != b.contacts.frames.size()) return false;
  for (std::size_t t = 0; t < a.contacts.frames.size(); ++t) {
    const auto& x = a.contacts.frames[t];
    const auto& y = b.contacts.frames[t];
    if (x.body_speed != y.body_speed || x.points.size() != y.points.size()) return false;
    for (std::size_t i = 0; i < x.points.size(); ++i) {
      if (x.points[i].vertex_id != y.points[i].vertex_id || x.points[i].confidence != y.points[i].confidence ||
          x.points[i].position != y.points[i].position) {
        return false;
      }
    }
  }
  return a.human.masks == b.human.masks && a.human.mesh_depth == b.human.mesh_depth && a.fps == b.fps;
}

}  // namespace

TEST_CASE("load_dataset reads a synthetic staircase") {
  testing::TempDir dir("ingest_load");
  save_dataset(small_stairs().dataset, dir.path());
  const Dataset d = load_dataset(dir.path());
  CHECK(d.points.frame_count() == 10);
  CHECK(d.points.width == 64);
  CHECK(d.motion.frame_count() == 10);
  // the manifest path itself is accepted too
  CHECK(load_dataset(dir / "manifest.json").points.frame_count() == 10);
}

TEST_CASE("dataset round trip is bit-exact") {
  testing::TempDir dir("ingest_roundtrip");
  save_dataset(small_stairs().dataset, dir / "a");
  const Dataset once = load_dataset(dir / "a");
  CHECK(same_dataset(once, small_stairs().dataset));
  save_dataset(once, dir / "b");
  CHECK(same_dataset(load_dataset(dir / "b"), once));
}

TEST_CASE("load_dataset failures") {
  testing::TempDir dir("ingest_fail");
  save_dataset(small_stairs().dataset, dir.path());

  SUBCASE("missing flow file") {
    fs::remove(dir / "flows/00000_00001.f32");
    try {
      load_dataset(dir.path());
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::ShapeMismatch);
    }
  }
  SUBCASE("truncated point file") {
    fs::resize_file(dir / "points.f32", fs::file_size(dir / "points.f32") - 4);
    try {
      load_dataset(dir.path());
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::ShapeMismatch);
    }
  }
  SUBCASE("empty frame list") {
    nlohmann::json m;
    std::ifstream(dir / "manifest.json") >> m;
    m["frames"] = nlohmann::json::array();
    std::ofstream(dir / "manifest.json") << m.dump();
    try {
      load_dataset(dir.path());
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::ManifestParse);
    }
  }
  SUBCASE("non-finite point") {
    std::fstream f(dir / "points.f32", std::ios::in | std::ios::out | std::ios::binary);
    const float nan = std::numeric_limits<float>::quiet_NaN();
    // first valid pixel of frame 0
    const auto& valid = small_stairs().dataset.points.frames[0].valid;
    const auto first = static_cast<std::streamoff>(std::find(valid.begin(), valid.end(), 1) - valid.begin());
    f.seekp(first * 12);
    f.write(reinterpret_cast<const char*>(&nan), sizeof nan);
    f.close();
    try {
      load_dataset(dir.path());
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::NonFiniteData);
    }
  }
  SUBCASE("missing manifest") {
    try {
      load_dataset(dir / "nope");
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::ManifestParse);
    }
  }
}

TEST_CASE("motion text round trip") {
  const MotionSequence& m = small_stairs().dataset.motion;
  std::stringstream ss;
  write_motion(ss, m);
  CHECK(same_motion(read_motion(ss), m));
}

TEST_CASE("recover_metric_scale") {
  const Dataset& d = clean_stairs().dataset;
  CHECK(recover_metric_scale(d.points, d.human, d.cameras) == doctest::Approx(1.0).epsilon(1e-6));

  for (double k : {0.5, 2.0, 4.0}) {
    PointMapSequence pts = d.points;
    CameraTrack cams = d.cameras;
    apply_metric_scale(pts, cams, k);
    const double s0 = recover_metric_scale(d.points, d.human, d.cameras);
    const double s = recover_metric_scale(pts, d.human, cams);
    CHECK(std::abs(s - s0 / k) <= 1e-9);
  }
  // equivariance holds on noisy maps too
  const Dataset& noisy = small_stairs().dataset;
  PointMapSequence pts = noisy.points;
  CameraTrack c2 = noisy.cameras;
  apply_metric_scale(pts, c2, 2.0);
  CHECK(std::abs(recover_metric_scale(pts, noisy.human, c2) - recover_metric_scale(noisy.points, noisy.human, noisy.cameras) / 2.0) <= 1e-9);

  PointMapSequence half = d.points;
  CameraTrack cams = d.cameras;
  apply_metric_scale(half, cams, 0.5);
  CHECK(recover_metric_scale(half, d.human, cams) == doctest::Approx(2.0).epsilon(1e-6));
}

TEST_CASE("recover_metric_scale needs human pixels") {
  const Dataset& d = small_stairs().dataset;
  HumanObservations none = d.human;
  for (auto& m : none.masks) std::fill(m.begin(), m.end(), 0);
  try {
    recover_metric_scale(d.points, none, d.cameras);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InsufficientOverlap);
  }
  CHECK_THROWS_AS(recover_metric_scale(d.points, HumanObservations{}, d.cameras), Error);
}

TEST_CASE("nearest_rank_percentile") {
  CHECK(nearest_rank_percentile({5, 1, 3, 2, 4}, 0.5) == 3);
  CHECK(nearest_rank_percentile({5, 1, 3, 2, 4}, 1.0) == 5);
  CHECK(nearest_rank_percentile({5, 1, 3, 2, 4}, 0.01) == 1);
}

namespace {

// Single-row frame: one pixel per point, camera at the origin.
PointMapSequence row_frame(const std::vector<Vec3>& pts) {
  PointMapSequence s;
  s.width = static_cast<int>(pts.size());
  s.height = 1;
  s.frames.resize(1);
  for (const auto& p : pts) s.frames[0].points.push_back(p.cast<float>());
  s.frames[0].valid.assign(pts.size(), 1);
  return s;
}

}  // namespace

TEST_CASE("filter_points keeps a compact equal-depth frame") {
  std::vector<Vec3> pts;
  for (int i = 0; i < 50; ++i) pts.emplace_back(-0.5 + 0.02 * i, 0.1, 1.0);
  const auto out = filter_points(row_frame(pts), testing::still_motion(1, Vec3(0, 0, 1)), testing::origin_camera());
  CHECK(std::all_of(out.frames[0].valid.begin(), out.frames[0].valid.end(), [](auto v) { return v == 1; }));
}

TEST_CASE("filter_points removes far outliers by depth percentile") {
  std::vector<Vec3> pts;
  for (int i = 0; i < 100; ++i) pts.emplace_back(0.01 * i, 0.0, 1.0);
  for (int i = 0; i < 5; ++i) pts.emplace_back(0.0, 0.0, 50.0);
  // independent nearest-rank cut over the 105 depths
  std::vector<double> depths;
  for (const auto& p : pts) depths.push_back(p.z());
  std::sort(depths.begin(), depths.end());
  const double cut = depths[static_cast<std::size_t>(std::ceil(0.95 * 105)) - 1];

  PointFilterOptions o;
  o.max_pelvis_distance = 1e6;
  const auto out = filter_points(row_frame(pts), testing::still_motion(1, Vec3(0, 0, 1)), testing::origin_camera(), o);
  for (std::size_t i = 0; i < pts.size(); ++i) CHECK(out.frames[0].valid[i] == (pts[i].z() <= cut ? 1 : 0));
  CHECK(out.frames[0].valid[104] == 0);
  CHECK(out.frames[0].valid[0] == 1);
}

TEST_CASE("filter_points drops points beyond 2.5 m of the pelvis") {
  std::vector<Vec3> pts(40, Vec3(0, 0, 4));
  pts.push_back(Vec3(3.0, 0, 4));   // 3.0 m away
  pts.push_back(Vec3(2.49, 0, 4));  // just inside
  const auto out = filter_points(row_frame(pts), testing::still_motion(1, Vec3(0, 0, 4)), testing::origin_camera());
  CHECK(out.frames[0].valid[40] == 0);
  CHECK(out.frames[0].valid[41] == 1);
}

TEST_CASE("filter_points is idempotent") {
  const Dataset& d = small_stairs().dataset;
  const auto once = filter_points(d.points, d.motion, d.cameras);
  const auto twice = filter_points(once, d.motion, d.cameras);
  std::size_t removed = 0;
  for (std::size_t t = 0; t < once.frame_count(); ++t) {
    CHECK(once.frames[t].valid == twice.frames[t].valid);
    removed += d.points.frames[t].valid_count() - once.frames[t].valid_count();
  }
  CHECK(removed > 0);
}

TEST_CASE("filter_points requires matching motion") {
  const Dataset& d = small_stairs().dataset;
  CHECK_THROWS_AS(filter_points(d.points, testing::still_motion(3, Vec3::Zero()), d.cameras), Error);
}

TEST_CASE("despike_points pulls an isolated spike back to its neighbors") {
  PointMapSequence s;
  s.width = 9;
  s.height = 9;
  s.frames.resize(1);
  CameraTrack cams = testing::origin_camera();
  cams.intrinsics << 10, 0, 4, 0, 10, 4, 0, 0, 1;
  for (int v = 0; v < 9; ++v) {
    for (int u = 0; u < 9; ++u) {
      const double z = (u == 4 && v == 4) ? 3.0 : 2.0;
      s.frames[0].points.push_back((z * cams.ray_direction(0, u, v)).cast<float>());
    }
  }
  s.frames[0].valid.assign(81, 1);
  const PointMapSequence before = s;
  despike_points(s, cams, 2, 0.05);
  CHECK(cams.depth(0, s.frames[0].points[40].cast<double>()) == doctest::Approx(2.0));
  for (int i = 0; i < 81; ++i) {
    if (i != 40) CHECK(s.frames[0].points[static_cast<std::size_t>(i)] == before.frames[0].points[static_cast<std::size_t>(i)]);
  }
  PointMapSequence untouched = before;
  despike_points(untouched, cams, 0, 0.05);
  CHECK(untouched.frames[0].points == before.frames[0].points);
}

TEST_CASE("mask_out_human invalidates masked pixels") {
  const Dataset& d = small_stairs().dataset;
  PointMapSequence pts = d.points;
  mask_out_human(pts, d.human);
  std::size_t masked = 0;
  for (std::size_t t = 0; t < pts.frame_count(); ++t) {
    for (std::size_t i = 0; i < pts.pixel_count(); ++i) {
      if (d.human.masks[t][i]) {
        CHECK(pts.frames[t].valid[i] == 0);
        ++masked;
      }
    }
  }
  CHECK(masked > 0);
}
