#include "crisp/synth.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <numbers>

#include "crisp/evaluation.hpp"
#include "crisp/ingest.hpp"
#include "crisp/parallel.hpp"
#include "crisp/rng.hpp"

namespace crisp {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kOcclusionTol = 1e-6;

struct Face {
  Vec3 normal;
  double offset;
  Vec3 center;
  Vec3 ax, ay;
  double hx, hy;
};

Face face_of(const Primitive& p) {
  Face f;
  f.normal = p.normal();
  f.center = p.face_center();
  f.offset = f.normal.dot(f.center);
  f.ax = p.rotation().col(0);
  f.ay = p.rotation().col(1);
  f.hx = 0.5 * p.extents().x();
  f.hy = 0.5 * p.extents().y();
  return f;
}

// Ray parameter of the hit on the face rectangle, or +inf.
double intersect(const Face& f, const Vec3& origin, const Vec3& dir) {
  const double denom = f.normal.dot(dir);
  if (std::abs(denom) < 1e-15) return std::numeric_limits<double>::infinity();
  const double s = (f.offset - f.normal.dot(origin)) / denom;
  if (!(s > 1e-12)) return std::numeric_limits<double>::infinity();
  const Vec3 r = origin + s * dir - f.center;
  if (std::abs(f.ax.dot(r)) > f.hx || std::abs(f.ay.dot(r)) > f.hy) {
    return std::numeric_limits<double>::infinity();
  }
  return s;
}

double intersect(const Aabb& box, const Vec3& origin, const Vec3& dir) {
  double lo = 1e-12;
  double hi = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 3; ++k) {
    if (std::abs(dir[k]) < 1e-15) {
      if (origin[k] < box.lo[k] || origin[k] > box.hi[k]) return std::numeric_limits<double>::infinity();
      continue;
    }
    double a = (box.lo[k] - origin[k]) / dir[k];
    double b = (box.hi[k] - origin[k]) / dir[k];
    if (a > b) std::swap(a, b);
    lo = std::max(lo, a);
    hi = std::min(hi, b);
    if (lo > hi) return std::numeric_limits<double>::infinity();
  }
  return lo;
}

std::vector<Face> visible_faces(const SceneSpec& spec, std::vector<int>& index) {
  std::vector<Face> faces;
  for (std::size_t k = 0; k < spec.primitives.size(); ++k) {
    if (!spec.hidden.empty() && spec.hidden[k]) continue;
    faces.push_back(face_of(spec.primitives[k]));
    index.push_back(static_cast<int>(k));
  }
  return faces;
}

SE3 look_at(const Vec3& eye, const Vec3& target) {
  const Vec3 z = (target - eye).normalized();
  const Vec3 x = z.cross(Vec3::UnitZ()).normalized();
  const Vec3 y = z.cross(x);
  Mat3 r;
  r << x, y, z;
  return SE3{UnitQuat::from_matrix(r), eye};
}

Mat3 intrinsics(int width, int height) {
  const double f = 0.8 * width;
  Mat3 K = Mat3::Identity();
  K(0, 0) = f;
  K(1, 1) = f;
  K(0, 2) = 0.5 * (width - 1);
  K(1, 2) = 0.5 * (height - 1);
  return K;
}

/// Box whose observed face is centered at `face_center` with in-plane axis
/// `x_axis`; the body extends along `inward`.
Primitive face_box(const Vec3& face_center, const Vec3& x_axis, const Vec3& inward, double sx, double sy,
                   double sz = 0.05) {
  const Vec3 n = inward.normalized();
  const Vec3 x = (x_axis - x_axis.dot(n) * n).normalized();
  Mat3 r;
  r << x, n.cross(x), n;
  return Primitive(r, face_center + 0.5 * sz * n, Vec3(sx, sy, sz));
}

void add(SceneSpec& s, std::string label, const Primitive& p, bool hidden = false) {
  s.primitives.push_back(p);
  s.labels.push_back(std::move(label));
  s.hidden.push_back(hidden ? 1 : 0);
}

// Horizontal patch at height z over [x0, x1] x [y0, y1], seen from above.
Primitive horizontal(double x0, double x1, double y0, double y1, double z) {
  return face_box(Vec3(0.5 * (x0 + x1), 0.5 * (y0 + y1), z), Vec3::UnitX(), -Vec3::UnitZ(), x1 - x0, y1 - y0);
}

// Vertical patch in the plane x = c over [y0, y1] x [z0, z1]; `side` is the
// sign of x behind the surface.
Primitive wall_x(double c, double y0, double y1, double z0, double z1, double side = 1.0) {
  return face_box(Vec3(c, 0.5 * (y0 + y1), 0.5 * (z0 + z1)), Vec3::UnitY(), side * Vec3::UnitX(), y1 - y0,
                  z1 - z0);
}

// Vertical patch in the plane y = c over [x0, x1] x [z0, z1].
Primitive wall_y(double c, double x0, double x1, double z0, double z1, double side = 1.0) {
  return face_box(Vec3(0.5 * (x0 + x1), c, 0.5 * (z0 + z1)), Vec3::UnitX(), side * Vec3::UnitY(), x1 - x0,
                  z1 - z0);
}

const Primitive* find_label(const SceneSpec& spec, std::string_view label) {
  for (std::size_t k = 0; k < spec.labels.size(); ++k) {
    if (spec.labels[k] == label) return &spec.primitives[k];
  }
  return nullptr;
}

// ------------------------------------------------------------------ body

enum Joint { kPelvis, kChest, kHead, kLHand, kRHand, kLKnee, kRKnee, kLFoot, kRFoot, kJointCount };

struct BodyPose {
  Vec3 pelvis = Vec3::Zero();
  double yaw = 0.0;
  double sit = 0.0;  ///< 0 standing, 1 seated
  Vec3 lfoot = Vec3::Zero();
  Vec3 rfoot = Vec3::Zero();
};

MotionFrame pose_frame(const BodyPose& b) {
  const UnitQuat q = UnitQuat::from_axis_angle(Vec3::UnitZ(), b.yaw);
  const Vec3 f = q.rotate(Vec3::UnitX());
  const Vec3 l = q.rotate(Vec3::UnitY());
  const Vec3 up = Vec3::UnitZ();
  MotionFrame m;
  m.root = SE3{q, b.pelvis};
  m.joints.resize(kJointCount);
  auto set = [&](Joint j, const Vec3& p) {
    m.joints[j].position = p;
    m.joints[j].rotation = q;
  };
  set(kPelvis, b.pelvis);
  set(kChest, b.pelvis + 0.3 * up);
  set(kHead, b.pelvis + 0.6 * up);
  set(kLHand, b.pelvis + 0.05 * f + 0.25 * l + 0.05 * up);
  set(kRHand, b.pelvis + 0.05 * f - 0.25 * l + 0.05 * up);
  for (const auto& [knee, foot, side] : {std::tuple{kLKnee, b.lfoot, 1.0}, std::tuple{kRKnee, b.rfoot, -1.0}}) {
    const Vec3 hip = b.pelvis + side * 0.1 * l;
    const Vec3 standing = 0.5 * (hip + foot) + 0.05 * f;
    const Vec3 seated = hip + 0.4 * f;
    set(knee, (1.0 - b.sit) * standing + b.sit * seated);
  }
  set(kLFoot, b.lfoot);
  set(kRFoot, b.rfoot);
  return m;
}

// Central differences for velocities; one-sided at the ends.
void fill_velocities(MotionSequence& m, double fps) {
  const std::size_t T = m.frame_count();
  if (T < 2) return;
  for (std::size_t t = 0; t < T; ++t) {
    const std::size_t a = t == 0 ? 0 : t - 1;
    const std::size_t b = t + 1 == T ? t : t + 1;
    const double dt = static_cast<double>(b - a) / fps;
    for (std::size_t j = 0; j < m.frames[t].joints.size(); ++j) {
      auto& js = m.frames[t].joints[j];
      const auto& ja = m.frames[a].joints[j];
      const auto& jb = m.frames[b].joints[j];
      js.linear_velocity = (jb.position - ja.position) / dt;
      const Eigen::AngleAxisd aa(jb.rotation.quaternion() * ja.rotation.quaternion().conjugate());
      js.angular_velocity = aa.axis() * aa.angle() / dt;
    }
  }
}

std::vector<double> body_speeds(const MotionSequence& m, double fps) {
  std::vector<double> out(m.frame_count(), 0.0);
  const std::size_t T = m.frame_count();
  for (std::size_t t = 0; T >= 2 && t < T; ++t) {
    const std::size_t a = t == 0 ? 0 : t - 1;
    const std::size_t b = t + 1 == T ? t : t + 1;
    out[t] = (m.frames[b].pelvis() - m.frames[a].pelvis()).norm() * fps / static_cast<double>(b - a);
  }
  return out;
}

struct Gait {
  Vec3 lfoot, rfoot;
  bool lstance, rstance;
};

// Feet for walking at distance `dist` along heading `yaw`; the floor height
// under a point comes from `floor`.
template <typename Floor>
Gait walk_feet(const Vec3& pelvis, double yaw, double dist, Floor&& floor) {
  const Vec3 f(std::cos(yaw), std::sin(yaw), 0.0);
  const Vec3 l(-std::sin(yaw), std::cos(yaw), 0.0);
  const double phase = dist / 0.35 * kPi;
  const double swing = std::sin(phase);
  Gait g;
  Vec3 lf = pelvis + 0.2 * swing * f + 0.1 * l;
  Vec3 rf = pelvis - 0.2 * swing * f - 0.1 * l;
  const double llift = 0.06 * std::max(0.0, std::cos(phase));
  const double rlift = 0.06 * std::max(0.0, -std::cos(phase));
  lf.z() = floor(lf) + llift;
  rf.z() = floor(rf) + rlift;
  g.lfoot = lf;
  g.rfoot = rf;
  g.lstance = llift == 0.0;
  g.rstance = rlift == 0.0;
  return g;
}

void add_foot_contacts(ContactFrame& cf, const Vec3& foot, double yaw, double confidence, int base_id) {
  const Vec3 f(std::cos(yaw), std::sin(yaw), 0.0);
  const Vec3 l(-std::sin(yaw), std::cos(yaw), 0.0);
  int id = base_id;
  for (double a : {-0.08, 0.1}) {
    for (double b : {-0.04, 0.04}) cf.points.push_back({id++, confidence, foot + a * f + b * l});
  }
}

double face_height(const Primitive& p) { return p.face_center().z(); }

bool over_face(const Primitive& p, const Vec3& q) {
  const Vec3 l = p.rotation().transpose() * (q - p.face_center());
  return std::abs(l.x()) <= 0.5 * p.extents().x() && std::abs(l.y()) <= 0.5 * p.extents().y();
}

MotionAndContacts finish(MotionSequence motion, std::vector<ContactFrame> contacts, double fps) {
  fill_velocities(motion, fps);
  const auto speeds = body_speeds(motion, fps);
  for (std::size_t t = 0; t < contacts.size(); ++t) contacts[t].body_speed = speeds[t];
  return {std::move(motion), ContactSequence{std::move(contacts)}};
}

MotionAndContacts script_walk(const SceneSpec& spec, int T, double fps, const Vec3& start, double yaw,
                              double speed) {
  const Primitive* ground = find_label(spec, "ground");
  if (!ground) throw Error(ErrorCode::ScenarioMismatch, "walk needs a primitive labeled ground");
  const double h = face_height(*ground);
  MotionSequence motion;
  std::vector<ContactFrame> contacts(static_cast<std::size_t>(T));
  const Vec3 dir(std::cos(yaw), std::sin(yaw), 0.0);
  for (int t = 0; t < T; ++t) {
    const double dist = speed * t / fps;
    BodyPose b;
    b.pelvis = start + dist * dir;
    b.pelvis.z() = h + 0.9;
    b.yaw = yaw;
    const Gait g = walk_feet(b.pelvis, yaw, dist, [h](const Vec3&) { return h; });
    b.lfoot = g.lfoot;
    b.rfoot = g.rfoot;
    motion.frames.push_back(pose_frame(b));
    auto& cf = contacts[static_cast<std::size_t>(t)];
    add_foot_contacts(cf, g.lfoot, yaw, g.lstance ? 0.9 : 0.1, 0);
    add_foot_contacts(cf, g.rfoot, yaw, g.rstance ? 0.9 : 0.1, 4);
  }
  return finish(std::move(motion), std::move(contacts), fps);
}

MotionAndContacts script_room(const SceneSpec& spec, int T, double fps) {
  const Primitive* ground = find_label(spec, "ground");
  if (!ground) throw Error(ErrorCode::ScenarioMismatch, "room walk needs a primitive labeled ground");
  const double h = face_height(*ground);
  const double radius = 1.5;
  MotionSequence motion;
  std::vector<ContactFrame> contacts(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) {
    const double theta = 2.0 * kPi * t / T;
    BodyPose b;
    b.pelvis = Vec3(radius * std::cos(theta), radius * std::sin(theta), h + 0.9);
    b.yaw = theta + 0.5 * kPi;
    const Gait g = walk_feet(b.pelvis, b.yaw, radius * theta, [h](const Vec3&) { return h; });
    b.lfoot = g.lfoot;
    b.rfoot = g.rfoot;
    motion.frames.push_back(pose_frame(b));
    auto& cf = contacts[static_cast<std::size_t>(t)];
    add_foot_contacts(cf, g.lfoot, b.yaw, g.lstance ? 0.9 : 0.1, 0);
    add_foot_contacts(cf, g.rfoot, b.yaw, g.rstance ? 0.9 : 0.1, 4);
  }
  return finish(std::move(motion), std::move(contacts), fps);
}

MotionAndContacts script_stairs(const SceneSpec& spec, int T, double fps) {
  const Primitive* ground = find_label(spec, "ground");
  std::vector<const Primitive*> treads;
  for (std::size_t k = 0; k < spec.labels.size(); ++k) {
    if (spec.labels[k].rfind("tread", 0) == 0) treads.push_back(&spec.primitives[k]);
  }
  if (!ground || treads.empty()) {
    throw Error(ErrorCode::ScenarioMismatch, "stairs needs primitives labeled ground and tread*");
  }
  std::sort(treads.begin(), treads.end(),
            [](const Primitive* a, const Primitive* b) { return a->face_center().x() < b->face_center().x(); });
  const double h0 = face_height(*ground);
  // Support height under a point: highest tread containing it, else ground.
  auto floor = [&](const Vec3& q) {
    double z = h0;
    for (const auto* tr : treads) {
      if (over_face(*tr, q)) z = std::max(z, face_height(*tr));
    }
    return z;
  };
  // Pelvis height ramps linearly between tread centers.
  std::vector<std::pair<double, double>> ramp{{treads.front()->face_center().x() - 0.3, h0}};
  for (const auto* tr : treads) ramp.emplace_back(tr->face_center().x(), face_height(*tr));
  auto pelvis_floor = [&](double x) {
    if (x <= ramp.front().first) return ramp.front().second;
    for (std::size_t k = 1; k < ramp.size(); ++k) {
      if (x <= ramp[k].first) {
        const double a = (x - ramp[k - 1].first) / (ramp[k].first - ramp[k - 1].first);
        return (1.0 - a) * ramp[k - 1].second + a * ramp[k].second;
      }
    }
    return ramp.back().second;
  };

  const double x0 = treads.front()->face_center().x() - 1.15;
  const double x1 = treads.back()->face_center().x();
  // Walks the lane 0.35 m inside the far (+y) edge of the flight.
  double y_max = -std::numeric_limits<double>::infinity();
  for (const auto& c : treads.front()->corners()) y_max = std::max(y_max, c.y());
  const double y = std::max(treads.front()->face_center().y(), y_max - 0.35);
  MotionSequence motion;
  std::vector<ContactFrame> contacts(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) {
    const double a = T > 1 ? static_cast<double>(t) / (T - 1) : 0.0;
    const double x = x0 + a * (x1 - x0);
    BodyPose b;
    b.pelvis = Vec3(x, y, pelvis_floor(x) + 0.9);
    b.yaw = 0.0;
    const Gait g = walk_feet(b.pelvis, 0.0, x - x0, floor);
    b.lfoot = g.lfoot;
    b.rfoot = g.rfoot;
    motion.frames.push_back(pose_frame(b));
    auto& cf = contacts[static_cast<std::size_t>(t)];
    add_foot_contacts(cf, g.lfoot, 0.0, g.lstance ? 0.9 : 0.1, 0);
    add_foot_contacts(cf, g.rfoot, 0.0, g.rstance ? 0.9 : 0.1, 4);
    // Sole points sit on the support plane of the foot's center.
    for (auto& p : cf.points) {
      if (p.confidence >= 0.5) p.position.z() = floor(p.vertex_id < 4 ? g.lfoot : g.rfoot);
    }
  }
  return finish(std::move(motion), std::move(contacts), fps);
}

MotionAndContacts script_sit(const SceneSpec& spec, int T, double fps) {
  const Primitive* ground = find_label(spec, "ground");
  const Primitive* seat = find_label(spec, "seat");
  if (!ground || !seat) throw Error(ErrorCode::ScenarioMismatch, "sit needs primitives labeled ground and seat");
  const int walk_in = static_cast<int>(std::lround(0.25 * T));
  const int sit_down = static_cast<int>(std::lround(0.1 * T));
  const int stand_up = sit_down;
  const int walk_out = static_cast<int>(std::lround(0.15 * T));
  const int seated = T - walk_in - sit_down - stand_up - walk_out;
  if (seated < 30) throw Error(ErrorCode::InvalidArgument, "sit scenario needs at least 80 frames");

  const double h0 = face_height(*ground);
  const Vec3 seat_c = seat->face_center();
  const Vec3 p_seat(seat_c.x(), seat_c.y(), seat_c.z() + 0.1);
  const Vec3 p_stand(seat_c.x() - 0.3, seat_c.y(), h0 + 0.9);
  const Vec3 p_start(p_stand.x() - 1.5, p_stand.y() - 0.5, h0 + 0.9);
  const Vec3 p_exit = p_stand + Vec3(0.0, -1.2, 0.0);
  const double in_yaw = std::atan2(p_stand.y() - p_start.y(), p_stand.x() - p_start.x());

  // Seat contact grid spans the seat face.
  std::vector<Vec3> seat_grid;
  const Vec3 hx = 0.5 * seat->extents().x() * seat->rotation().col(0);
  const Vec3 hy = 0.5 * seat->extents().y() * seat->rotation().col(1);
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 5; ++j) seat_grid.push_back(seat_c + (i / 2.0 - 1.0) * hx + (j / 2.0 - 1.0) * hy);
  }

  MotionSequence motion;
  std::vector<ContactFrame> contacts(static_cast<std::size_t>(T));
  auto flat = [h0](const Vec3&) { return h0; };
  for (int t = 0; t < T; ++t) {
    BodyPose b;
    double seat_conf = 0.0;
    double feet_conf = 0.9;
    bool lstance = true, rstance = true;
    if (t < walk_in) {
      const double a = static_cast<double>(t) / walk_in;
      b.pelvis = p_start + a * (p_stand - p_start);
      b.yaw = in_yaw;
      const Gait g = walk_feet(b.pelvis, b.yaw, (b.pelvis - p_start).norm(), flat);
      b.lfoot = g.lfoot;
      b.rfoot = g.rfoot;
      lstance = g.lstance;
      rstance = g.rstance;
    } else if (t < walk_in + sit_down + seated + stand_up) {
      const int k = t - walk_in;
      double a = 1.0;  // 0 standing at p_stand, 1 seated
      if (k < sit_down) a = static_cast<double>(k + 1) / sit_down;
      if (k >= sit_down + seated) a = 1.0 - static_cast<double>(k - sit_down - seated + 1) / stand_up;
      b.pelvis = (1.0 - a) * p_stand + a * p_seat;
      if (k >= sit_down && k < sit_down + seated) {
        b.pelvis.y() += 0.004 * std::sin(2.0 * kPi * (k - sit_down) / seated);
        seat_conf = 0.9;
        feet_conf = 0.3;
      }
      b.yaw = k < sit_down ? in_yaw + a * (kPi - in_yaw) : kPi;
      b.sit = a;
      const Vec3 f(std::cos(b.yaw), std::sin(b.yaw), 0.0);
      const Vec3 l(-std::sin(b.yaw), std::cos(b.yaw), 0.0);
      b.lfoot = Vec3(b.pelvis.x(), b.pelvis.y(), h0) + 0.45 * a * f + 0.1 * l;
      b.rfoot = Vec3(b.pelvis.x(), b.pelvis.y(), h0) + 0.45 * a * f - 0.1 * l;
    } else {
      const double a = static_cast<double>(t - (T - walk_out) + 1) / walk_out;
      b.pelvis = p_stand + a * (p_exit - p_stand);
      b.yaw = -0.5 * kPi;
      const Gait g = walk_feet(b.pelvis, b.yaw, (b.pelvis - p_stand).norm(), flat);
      b.lfoot = g.lfoot;
      b.rfoot = g.rfoot;
      lstance = g.lstance;
      rstance = g.rstance;
    }
    motion.frames.push_back(pose_frame(b));
    auto& cf = contacts[static_cast<std::size_t>(t)];
    add_foot_contacts(cf, b.lfoot, b.yaw, lstance ? feet_conf : 0.1, 0);
    add_foot_contacts(cf, b.rfoot, b.yaw, rstance ? feet_conf : 0.1, 4);
    for (std::size_t i = 0; i < seat_grid.size(); ++i) {
      const Vec3 pos = seat_conf > 0.0 ? seat_grid[i] : b.pelvis - Vec3(0.0, 0.0, 0.1) + (seat_grid[i] - seat_c);
      cf.points.push_back({100 + static_cast<int>(i), seat_conf, pos});
    }
  }
  return finish(std::move(motion), std::move(contacts), fps);
}

}  // namespace

// ------------------------------------------------------------------ rendering

void SceneSpec::validate() const {
  if (primitives.empty()) throw Error(ErrorCode::InvalidArgument, "scene needs at least one primitive");
  if (cameras.poses.size() < 2) throw Error(ErrorCode::InvalidArgument, "scene needs at least two camera frames");
  if (!(sigma >= 0.0)) throw Error(ErrorCode::InvalidArgument, "noise sigma must be >= 0");
  if (!(outlier_fraction >= 0.0 && outlier_fraction <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "outlier fraction must be in [0, 1]");
  }
  if (width <= 0 || height <= 0) throw Error(ErrorCode::InvalidArgument, "image size must be positive");
  if (!labels.empty() && labels.size() != primitives.size()) {
    throw Error(ErrorCode::ShapeMismatch, "one label per primitive");
  }
  if (!hidden.empty() && hidden.size() != primitives.size()) {
    throw Error(ErrorCode::ShapeMismatch, "one hidden flag per primitive");
  }
  if (!human.empty() && human.size() != cameras.poses.size()) {
    throw Error(ErrorCode::ShapeMismatch, "one human box per frame");
  }
}

RenderedScene render_pointmaps(const SceneSpec& spec, int workers) {
  spec.validate();
  std::vector<int> index;
  const std::vector<Face> faces = visible_faces(spec, index);
  const std::size_t T = spec.frame_count();
  const int W = spec.width;
  const int H = spec.height;
  const std::size_t N = static_cast<std::size_t>(W) * static_cast<std::size_t>(H);

  RenderedScene out;
  out.points.width = W;
  out.points.height = H;
  out.points.frames.resize(T);
  out.ids.assign(T, std::vector<int>(N, kNoHit));
  out.outliers.assign(T, Mask(N, 0));
  if (!spec.human.empty()) {
    out.human.masks.assign(T, Mask(N, 0));
    out.human.mesh_depth.assign(T, std::vector<float>(N, 0.0f));
  }

  parallel_for(T, workers, [&](std::size_t t) {
    auto& frame = out.points.frames[t];
    frame.points.assign(N, Eigen::Vector3f::Zero());
    frame.valid.assign(N, 0);
    const Vec3 c = spec.cameras.center(t);
    for (int v = 0; v < H; ++v) {
      for (int u = 0; u < W; ++u) {
        const std::size_t i = static_cast<std::size_t>(v) * W + u;
        const Vec3 d = spec.cameras.ray_direction(t, u, v);
        double best = std::numeric_limits<double>::infinity();
        int id = kNoHit;
        for (std::size_t k = 0; k < faces.size(); ++k) {
          const double s = intersect(faces[k], c, d);
          if (s < best) {
            best = s;
            id = index[k];
          }
        }
        if (!spec.human.empty()) {
          const double s = intersect(spec.human[t], c, d);
          if (s < best) {
            best = s;
            id = kHumanHit;
            out.human.masks[t][i] = 1;
            out.human.mesh_depth[t][i] = static_cast<float>(s);
          }
        }
        if (id == kNoHit) continue;
        out.ids[t][i] = id;
        Rng rng(stream_key(spec.seed, t, i));
        const bool outlier = rng.uniform() < spec.outlier_fraction;
        double s = best;
        if (outlier) {
          s = rng.uniform(spec.outlier_min_depth, spec.outlier_max_depth);
          out.outliers[t][i] = 1;
        } else if (spec.sigma > 0.0) {
          s += spec.sigma * rng.normal() / d.norm();
        }
        frame.points[i] = (c + s * d).cast<float>();
        frame.valid[i] = 1;
      }
    }
  });
  return out;
}

std::optional<Vec3> clean_point(const SceneSpec& spec, const RenderedScene& render, std::size_t frame,
                                int pixel) {
  const int id = render.ids[frame][static_cast<std::size_t>(pixel)];
  if (id < 0) return std::nullopt;
  const Face f = face_of(spec.primitives[static_cast<std::size_t>(id)]);
  const Vec3 c = spec.cameras.center(frame);
  const Vec3 d = spec.cameras.ray_direction(frame, pixel % spec.width, pixel / spec.width);
  const double s = (f.offset - f.normal.dot(c)) / f.normal.dot(d);
  return c + s * d;
}

std::vector<FlowField> exact_flows(const SceneSpec& spec, const RenderedScene& render,
                                   std::span<const int> strides, int workers) {
  std::vector<int> index;
  const std::vector<Face> faces = visible_faces(spec, index);
  const auto T = static_cast<int>(spec.frame_count());
  const int W = spec.width;
  const int H = spec.height;
  const std::size_t N = static_cast<std::size_t>(W) * static_cast<std::size_t>(H);

  std::vector<std::pair<int, int>> pairs;
  for (int s : strides) {
    if (s <= 0) throw Error(ErrorCode::InvalidArgument, "flow strides must be positive");
    for (int i = 0; i + s < T; ++i) pairs.emplace_back(i, i + s);
  }
  std::sort(pairs.begin(), pairs.end());
  pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());

  std::vector<FlowField> flows(pairs.size());
  parallel_for(pairs.size(), workers, [&](std::size_t k) {
    const auto [i, j] = pairs[k];
    FlowField& fl = flows[k];
    fl.source = i;
    fl.target = j;
    fl.width = W;
    fl.height = H;
    fl.flow.assign(N, Eigen::Vector2f::Zero());
    fl.covisible.assign(N, 0);
    const Vec3 cj = spec.cameras.center(static_cast<std::size_t>(j));
    for (std::size_t p = 0; p < N; ++p) {
      const auto X = clean_point(spec, render, static_cast<std::size_t>(i), static_cast<int>(p));
      if (!X) continue;
      const auto uv = spec.cameras.project(static_cast<std::size_t>(j), *X);
      if (!uv) continue;
      const double u = static_cast<double>(p % static_cast<std::size_t>(W));
      const double v = static_cast<double>(p / static_cast<std::size_t>(W));
      fl.flow[p] = Eigen::Vector2f(static_cast<float>(uv->x() - u), static_cast<float>(uv->y() - v));
      if (uv->x() < -0.5 || uv->y() < -0.5 || uv->x() >= W - 0.5 || uv->y() >= H - 0.5) continue;
      const Vec3 dir = *X - cj;
      const double limit = 1.0 - kOcclusionTol / dir.norm();
      bool blocked = false;
      for (const auto& f : faces) {
        if (intersect(f, cj, dir) < limit) {
          blocked = true;
          break;
        }
      }
      if (!blocked && !spec.human.empty()) {
        blocked = intersect(spec.human[static_cast<std::size_t>(j)], cj, dir) < limit;
      }
      fl.covisible[p] = blocked ? 0 : 1;
    }
  });
  return flows;
}

// ------------------------------------------------------------------ scenarios

Scenario parse_scenario(std::string_view name) {
  if (name == "walk") return Scenario::Walk;
  if (name == "sit") return Scenario::Sit;
  if (name == "stairs") return Scenario::Stairs;
  if (name == "room") return Scenario::Room;
  throw Error(ErrorCode::InvalidArgument, "unknown scenario '" + std::string(name) + "'");
}

std::string_view to_string(Scenario scenario) {
  switch (scenario) {
    case Scenario::Walk: return "walk";
    case Scenario::Sit: return "sit";
    case Scenario::Stairs: return "stairs";
    case Scenario::Room: return "room";
  }
  return "?";
}

MotionAndContacts synth_motion_and_contacts(const SceneSpec& spec, Scenario scenario, int frames, double fps) {
  if (frames < 2) throw Error(ErrorCode::InvalidArgument, "need at least two frames");
  switch (scenario) {
    case Scenario::Walk: return script_walk(spec, frames, fps, Vec3(-1.8, 0.3, 0.0), 0.0, 1.2);
    case Scenario::Sit: return script_sit(spec, frames, fps);
    case Scenario::Stairs: return script_stairs(spec, frames, fps);
    case Scenario::Room: return script_room(spec, frames, fps);
  }
  throw Error(ErrorCode::InvalidArgument, "unknown scenario");
}

std::vector<Aabb> human_boxes(const MotionSequence& motion, double padding) {
  std::vector<Aabb> out;
  out.reserve(motion.frame_count());
  for (const auto& f : motion.frames) {
    Aabb box{f.root.translation, f.root.translation};
    for (const auto& j : f.joints) {
      box.lo = box.lo.cwiseMin(j.position);
      box.hi = box.hi.cwiseMax(j.position);
    }
    box.lo.array() -= padding;
    box.hi.array() += padding;
    out.push_back(box);
  }
  return out;
}

SceneSpec scenario_scene(Scenario scenario, const ScenarioOptions& o) {
  if (o.frames < 2) throw Error(ErrorCode::InvalidArgument, "need at least two frames");
  SceneSpec s;
  s.width = o.width;
  s.height = o.height;
  s.sigma = o.sigma;
  s.outlier_fraction = o.outliers;
  s.seed = o.seed;
  s.cameras.intrinsics = intrinsics(o.width, o.height);
  const int T = o.frames;
  auto tau = [T](int t) { return static_cast<double>(t) / (T - 1); };

  switch (scenario) {
    case Scenario::Stairs: {
      add(s, "ground", horizontal(-3.0, 4.0, -3.0, 3.0, 0.0));
      for (int k = 1; k <= 5; ++k) {
        add(s, "riser" + std::to_string(k), wall_x((k - 1) * 0.3, -0.6, 1.4, (k - 1) * 0.2, k * 0.2));
        add(s, "tread" + std::to_string(k), horizontal((k - 1) * 0.3, k * 0.3, -0.6, 1.4, k * 0.2));
      }
      for (int t = 0; t < T; ++t) {
        const Vec3 eye(-1.2 + 0.3 * tau(t), -1.4 + 0.4 * tau(t), 1.8);
        s.cameras.poses.push_back(look_at(eye, Vec3(0.75, 0.4, 0.4)));
      }
      break;
    }
    case Scenario::Sit: {
      add(s, "ground", horizontal(-2.0, 3.0, -2.0, 2.0, 0.0));
      add(s, "seat", horizontal(0.8, 1.2, -0.2, 0.2, 0.45), !o.show_seat);
      add(s, "chair_back", wall_x(1.25, -0.2, 0.2, 0.45, 0.95));
      add(s, "back_wall", wall_x(2.0, -2.0, 2.0, 0.0, 2.5));
      add(s, "side_wall", wall_y(2.0, -2.0, 2.0, 0.0, 2.5));
      add(s, "table", horizontal(1.4, 1.9, 0.6, 1.4, 0.75));
      for (int t = 0; t < T; ++t) {
        const Vec3 eye(-1.2 + 0.3 * tau(t), -1.6 + 0.6 * tau(t), 1.8);
        s.cameras.poses.push_back(look_at(eye, Vec3(1.0, 0.2, 0.5)));
      }
      break;
    }
    case Scenario::Walk: {
      add(s, "ground", horizontal(-3.0, 4.0, -2.0, 3.0, 0.0));
      add(s, "back_wall", wall_x(3.0, -2.0, 3.0, 0.0, 2.5));
      add(s, "side_wall", wall_y(2.0, -3.0, 3.0, 0.0, 2.5));
      add(s, "box_top", horizontal(1.0, 1.6, 0.9, 1.5, 0.5));
      add(s, "box_front", wall_x(1.0, 0.9, 1.5, 0.0, 0.5));
      for (int t = 0; t < T; ++t) {
        const Vec3 eye(-2.5 + 2.0 * tau(t), -1.5, 1.7);
        s.cameras.poses.push_back(look_at(eye, eye + Vec3(1.0, 1.0, -0.6)));
      }
      break;
    }
    case Scenario::Room: {
      add(s, "ground", horizontal(-3.0, 3.0, -3.0, 3.0, 0.0));
      add(s, "wall_east", wall_x(3.0, -3.0, 3.0, 0.0, 2.6));
      add(s, "wall_north", wall_y(3.0, -3.0, 3.0, 0.0, 2.6));
      add(s, "wall_south", wall_y(-3.0, -3.0, 3.0, 0.0, 2.6, -1.0));
      add(s, "table_top", horizontal(1.0, 2.0, -0.5, 0.5, 0.75));
      add(s, "table_apron", wall_x(1.0, -0.5, 0.5, 0.6, 0.75));
      add(s, "cabinet_top", horizontal(2.2, 2.8, 1.5, 2.5, 1.0));
      add(s, "cabinet_front", wall_x(2.2, 1.5, 2.5, 0.0, 1.0));
      add(s, "cabinet_side", wall_y(1.5, 2.2, 2.8, 0.0, 1.0));
      add(s, "sofa_seat", horizontal(-0.5, 1.0, 2.0, 2.6, 0.45));
      add(s, "sofa_front", wall_y(2.0, -0.5, 1.0, 0.0, 0.45));
      add(s, "sofa_back", wall_y(2.6, -0.5, 1.0, 0.45, 1.0));
      add(s, "box_top", horizontal(-1.0, -0.5, -2.5, -2.0, 0.3));
      add(s, "box_front", wall_y(-2.0, -1.0, -0.5, 0.0, 0.3, -1.0));
      for (int k = 0; k < 3; ++k) {
        add(s, "shelf" + std::to_string(k + 1), horizontal(2.3, 2.9, -2.5, -1.5, 0.4 + 0.4 * k));
      }
      add(s, "platform_top", horizontal(-2.6, -1.6, 0.5, 1.5, 0.15));
      add(s, "platform_front", wall_x(-1.6, 0.5, 1.5, 0.0, 0.15, -1.0));
      add(s, "desk", horizontal(-2.6, -1.9, -1.5, -0.5, 0.7));
      for (int t = 0; t < T; ++t) {
        const double theta = 2.0 * kPi * t / T;
        const Vec3 eye(0.3 * std::cos(theta), 0.3 * std::sin(theta), 1.7);
        // Looks toward the walker, who stays a little ahead of the camera.
        const Vec3 walker(1.5 * std::cos(theta + 0.45), 1.5 * std::sin(theta + 0.45), 0.9);
        const Vec3 ahead = (walker - eye).normalized();
        const Vec3 target = eye + Vec3(ahead.x(), ahead.y(), 0.0).normalized() * 2.0 + Vec3(0.0, 0.0, -0.9);
        s.cameras.poses.push_back(look_at(eye, target));
      }
      break;
    }
  }
  return s;
}

SyntheticDataset make_synthetic(Scenario scenario, const ScenarioOptions& options, int workers) {
  SyntheticDataset out;
  out.scenario = scenario;
  out.spec = scenario_scene(scenario, options);
  MotionAndContacts mc = synth_motion_and_contacts(out.spec, scenario, options.frames, options.fps);
  out.spec.human = human_boxes(mc.motion);
  out.render = render_pointmaps(out.spec, workers);
  out.dataset.points = out.render.points;
  out.dataset.flows = exact_flows(out.spec, out.render, options.strides, workers);
  out.dataset.cameras = out.spec.cameras;
  out.dataset.motion = std::move(mc.motion);
  out.dataset.contacts = std::move(mc.contacts);
  out.dataset.human = out.render.human;
  out.dataset.fps = options.fps;
  return out;
}

std::vector<std::pair<std::size_t, Plane3>> rendered_planes(const SceneSpec& spec) {
  std::vector<std::pair<std::size_t, Plane3>> out;
  for (std::size_t k = 0; k < spec.primitives.size(); ++k) {
    if (!spec.hidden.empty() && spec.hidden[k]) continue;
    out.emplace_back(k, spec.primitives[k].face_plane());
  }
  return out;
}

void write_synthetic(const SyntheticDataset& data, const fs::path& dir) {
  save_dataset(data.dataset, dir);
  const fs::path gt = dir / "gt";
  fs::create_directories(gt);

  json planes = json::array();
  const auto& spec = data.spec;
  for (std::size_t k = 0; k < spec.primitives.size(); ++k) {
    const Primitive& p = spec.primitives[k];
    const Plane3 plane = p.face_plane();
    json rot = json::array();
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) rot.push_back(p.rotation()(r, c));
    }
    planes.push_back({
        {"id", k},
        {"label", spec.labels.empty() ? "" : spec.labels[k]},
        {"hidden", !spec.hidden.empty() && spec.hidden[k] != 0},
        {"normal", {plane.normal().x(), plane.normal().y(), plane.normal().z()}},
        {"offset", plane.offset()},
        {"rotation", rot},
        {"center", {p.center().x(), p.center().y(), p.center().z()}},
        {"extents", {p.extents().x(), p.extents().y(), p.extents().z()}},
    });
  }
  const json doc = {{"scenario", std::string(to_string(data.scenario))},
                    {"sigma", spec.sigma},
                    {"outlier_fraction", spec.outlier_fraction},
                    {"seed", spec.seed},
                    {"planes", planes}};
  std::ofstream(gt / "gt_planes.json") << doc.dump(2) << '\n';

  {
    std::ofstream ids(gt / "ids.i32", std::ios::binary);
    for (const auto& f : data.render.ids) {
      ids.write(reinterpret_cast<const char*>(f.data()), static_cast<std::streamsize>(f.size() * sizeof(int)));
    }
    std::ofstream outl(gt / "outliers.u8", std::ios::binary);
    for (const auto& f : data.render.outliers) {
      outl.write(reinterpret_cast<const char*>(f.data()), static_cast<std::streamsize>(f.size()));
    }
  }

  {
    const TriangleMesh mesh = primitives_mesh(spec.primitives);
    std::ofstream obj(gt / "gt_scene.obj");
    obj.precision(17);
    for (const auto& v : mesh.vertices) obj << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
    for (const auto& t : mesh.triangles) obj << "f " << t.x() + 1 << ' ' << t.y() + 1 << ' ' << t.z() + 1 << '\n';
  }
  write_motion_file(gt / "gt_motion.txt", data.dataset.motion);

  {
    std::ofstream body(gt / "body_vertices.jsonl");
    for (const auto& f : data.dataset.motion.frames) {
      json arr = json::array();
      for (const auto& j : f.joints) arr.push_back({j.position.x(), j.position.y(), j.position.z()});
      body << arr.dump() << '\n';
    }
  }
}

}  // namespace crisp
