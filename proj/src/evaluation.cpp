#include "crisp/evaluation.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>

#include "crisp/rng.hpp"

namespace crisp {

// ---------------------------------------------------------------- KD-tree

namespace {
constexpr std::uint32_t kLeafSize = 8;
}

KdTree::KdTree(std::span<const Vec3> points) : points_(points.begin(), points.end()) {
  if (points_.empty()) throw Error(ErrorCode::EmptySet, "KD-tree over an empty point set");
  order_.resize(points_.size());
  std::iota(order_.begin(), order_.end(), 0u);
  nodes_.reserve(2 * points_.size() / kLeafSize + 1);
  build(0, static_cast<std::uint32_t>(points_.size()));
}

std::int32_t KdTree::build(std::uint32_t begin, std::uint32_t end) {
  const auto id = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back({begin, end, -1, 0.0, -1, -1});
  if (end - begin <= kLeafSize) return id;
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (std::uint32_t i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_[order_[i]]);
    hi = hi.cwiseMax(points_[order_[i]]);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  if (!(hi[axis] > lo[axis])) return id;  // all points coincide
  const std::uint32_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) { return points_[a][axis] < points_[b][axis]; });
  const double split = points_[order_[mid]][axis];
  const std::int32_t left = build(begin, mid);
  const std::int32_t right = build(mid, end);
  nodes_[static_cast<std::size_t>(id)].axis = axis;
  nodes_[static_cast<std::size_t>(id)].split = split;
  nodes_[static_cast<std::size_t>(id)].left = left;
  nodes_[static_cast<std::size_t>(id)].right = right;
  return id;
}

void KdTree::search(std::int32_t id, const Vec3& q, std::size_t& best, double& best_d2) const {
  const Node& node = nodes_[static_cast<std::size_t>(id)];
  if (node.axis < 0) {
    for (std::uint32_t i = node.begin; i < node.end; ++i) {
      const std::uint32_t idx = order_[i];
      const double d2 = (q - points_[idx]).squaredNorm();
      if (d2 < best_d2 || (d2 == best_d2 && idx < best)) {
        best_d2 = d2;
        best = idx;
      }
    }
    return;
  }
  const double diff = q[node.axis] - node.split;
  const std::int32_t near = diff < 0.0 ? node.left : node.right;
  const std::int32_t far = diff < 0.0 ? node.right : node.left;
  search(near, q, best, best_d2);
  if (diff * diff <= best_d2) search(far, q, best, best_d2);
}

std::pair<std::size_t, double> KdTree::nearest(const Vec3& query) const {
  std::size_t best = std::numeric_limits<std::size_t>::max();
  double best_d2 = std::numeric_limits<double>::infinity();
  search(0, query, best, best_d2);
  return {best, best_d2};
}

// ---------------------------------------------------------------- Chamfer

double chamfer_one_way(std::span<const Vec3> from, std::span<const Vec3> to) {
  if (from.empty() || to.empty()) throw Error(ErrorCode::EmptySet, "Chamfer distance of an empty set");
  const KdTree tree(to);
  double sum = 0.0;
  for (const auto& p : from) sum += std::sqrt(tree.nearest(p).second);
  return sum / static_cast<double>(from.size());
}

ChamferResult chamfer(std::span<const Vec3> recon, std::span<const Vec3> gt) {
  ChamferResult r;
  r.recon_to_gt = chamfer_one_way(recon, gt);
  r.gt_to_recon = chamfer_one_way(gt, recon);
  r.bidirectional = 0.5 * (r.recon_to_gt + r.gt_to_recon);
  return r;
}

double non_penetration(std::span<const std::vector<Vec3>> vertices_per_frame,
                       std::span<const Primitive> primitives, double tolerance) {
  std::size_t total = 0;
  std::size_t clear = 0;
  for (const auto& frame : vertices_per_frame) {
    for (const auto& v : frame) {
      ++total;
      const bool ok = std::all_of(primitives.begin(), primitives.end(), [&](const Primitive& p) {
        return cuboid_signed_distance(v, p) >= -tolerance;
      });
      clear += ok ? 1 : 0;
    }
  }
  if (total == 0) throw Error(ErrorCode::EmptySet, "no body vertices");
  return static_cast<double>(clear) / static_cast<double>(total);
}

// ---------------------------------------------------------------- motion

namespace {

void check_pair(const MotionSequence& pred, const MotionSequence& gt) {
  if (pred.frame_count() != gt.frame_count()) {
    throw Error(ErrorCode::LengthMismatch, "predicted and ground-truth motion differ in frame count");
  }
  if (pred.frame_count() == 0) throw Error(ErrorCode::EmptySet, "empty motion sequence");
  for (std::size_t t = 0; t < pred.frame_count(); ++t) {
    if (pred.frames[t].joints.size() != gt.frames[t].joints.size()) {
      throw Error(ErrorCode::LengthMismatch, "predicted and ground-truth motion differ in joint count");
    }
  }
}

// Joint positions of frames [begin, end) as columns; the root translation is
// used when a frame carries no joints.
Eigen::Matrix3Xd stack_joints(const MotionSequence& m, std::size_t begin, std::size_t end) {
  std::size_t count = 0;
  for (std::size_t t = begin; t < end; ++t) count += std::max<std::size_t>(1, m.frames[t].joints.size());
  Eigen::Matrix3Xd out(3, static_cast<Eigen::Index>(count));
  Eigen::Index c = 0;
  for (std::size_t t = begin; t < end; ++t) {
    const auto& f = m.frames[t];
    if (f.joints.empty()) {
      out.col(c++) = f.root.translation;
    } else {
      for (const auto& j : f.joints) out.col(c++) = j.position;
    }
  }
  return out;
}

Eigen::Matrix4d rigid_align(const Eigen::Matrix3Xd& src, const Eigen::Matrix3Xd& dst) {
  return Eigen::umeyama(src, dst, false);
}

}  // namespace

double world_mpjpe(const MotionSequence& pred, const MotionSequence& gt, AlignMode mode,
                   const SegmentOptions& segments) {
  check_pair(pred, gt);
  const std::size_t T = pred.frame_count();
  const auto len = static_cast<std::size_t>(segments.length);
  double total = 0.0;
  int count = 0;
  for (std::size_t s = 0; s < T; s += len) {
    const std::size_t e = std::min(T, s + len);
    if (e - s < static_cast<std::size_t>(segments.min_tail) && s > 0) continue;
    const std::size_t align_end = mode == AlignMode::FirstTwoFrames ? std::min(e, s + 2) : e;
    const Eigen::Matrix4d A = rigid_align(stack_joints(pred, s, align_end), stack_joints(gt, s, align_end));
    const Eigen::Matrix3Xd P = stack_joints(pred, s, e);
    const Eigen::Matrix3Xd G = stack_joints(gt, s, e);
    const Eigen::Matrix3Xd aligned = (A.topLeftCorner<3, 3>() * P).colwise() + A.topRightCorner<3, 1>();
    total += (aligned - G).colwise().norm().mean() * 1000.0;
    ++count;
  }
  return total / count;
}

TrajectoryMetrics trajectory_metrics(const MotionSequence& pred, const MotionSequence& gt, double fps) {
  check_pair(pred, gt);
  const std::size_t T = pred.frame_count();
  TrajectoryMetrics m;

  const Eigen::Matrix4d A =
      rigid_align(stack_joints(pred, 0, std::min<std::size_t>(2, T)), stack_joints(gt, 0, std::min<std::size_t>(2, T)));
  double path = 0.0;
  for (std::size_t t = 1; t < T; ++t) {
    path += (gt.frames[t].root.translation - gt.frames[t - 1].root.translation).norm();
  }
  if (path > 1e-12) {
    const Vec3 end = A.topLeftCorner<3, 3>() * pred.frames[T - 1].root.translation + A.topRightCorner<3, 1>();
    m.rte = (end - gt.frames[T - 1].root.translation).norm() / path * 100.0;
  }

  const Eigen::Matrix3Xd P = stack_joints(pred, 0, T);
  const Eigen::Matrix3Xd G = stack_joints(gt, 0, T);
  const Eigen::Index J = P.cols() / static_cast<Eigen::Index>(T);
  auto at = [J](const Eigen::Matrix3Xd& X, std::size_t t, Eigen::Index j) {
    return X.col(static_cast<Eigen::Index>(t) * J + j);
  };
  // Nested differences so a constant path gives exactly zero.
  if (T >= 3) {
    double sum = 0.0;
    for (std::size_t t = 1; t + 1 < T; ++t) {
      for (Eigen::Index j = 0; j < J; ++j) {
        const Vec3 ap = (at(P, t + 1, j) - at(P, t, j)) - (at(P, t, j) - at(P, t - 1, j));
        const Vec3 ag = (at(G, t + 1, j) - at(G, t, j)) - (at(G, t, j) - at(G, t - 1, j));
        sum += (ap - ag).norm();
      }
    }
    m.accel = sum / static_cast<double>((T - 2) * static_cast<std::size_t>(J)) * 1000.0;
  }
  if (T >= 4) {
    double sum = 0.0;
    for (std::size_t t = 1; t + 2 < T; ++t) {
      for (Eigen::Index j = 0; j < J; ++j) {
        const Vec3 v0 = at(P, t, j) - at(P, t - 1, j);
        const Vec3 v1 = at(P, t + 1, j) - at(P, t, j);
        const Vec3 v2 = at(P, t + 2, j) - at(P, t + 1, j);
        const Vec3 jerk = (v2 - v1) - (v1 - v0);
        sum += jerk.norm();
      }
    }
    m.jitter = sum / static_cast<double>((T - 3) * static_cast<std::size_t>(J)) * fps * fps * fps / 10.0;
  }
  return m;
}

// ---------------------------------------------------------------- reward

double tracking_reward(const MotionFrame& sim, const MotionFrame& ref, std::span<const Vec3> torques,
                       std::span<const Vec3> dof_velocities, const RewardWeights& w) {
  if (sim.joints.size() != ref.joints.size()) {
    throw Error(ErrorCode::LengthMismatch, "simulated and reference joint counts differ");
  }
  if (torques.size() != dof_velocities.size()) {
    throw Error(ErrorCode::LengthMismatch, "torque and velocity counts differ");
  }
  double ep = 0.0, er = 0.0, ev = 0.0, ew = 0.0;
  for (std::size_t j = 0; j < sim.joints.size(); ++j) {
    const auto& a = ref.joints[j];
    const auto& b = sim.joints[j];
    ep += (a.position - b.position).squaredNorm();
    const double angle = quat_sub(a.rotation, b.rotation).angle();
    er += angle * angle;
    ev += (a.linear_velocity - b.linear_velocity).squaredNorm();
    ew += (a.angular_velocity - b.angular_velocity).squaredNorm();
  }
  const double eh = std::abs(ref.root.translation.z() - sim.root.translation.z());
  double energy = 0.0;
  for (std::size_t j = 0; j < torques.size(); ++j) energy += torques[j].cwiseProduct(dof_velocities[j]).norm();
  const double tracking = w.w_p * std::exp(-w.a_p * std::sqrt(ep)) + w.w_r * std::exp(-w.a_r * std::sqrt(er)) +
                          w.w_v * std::exp(-w.a_v * std::sqrt(ev)) + w.w_w * std::exp(-w.a_w * std::sqrt(ew)) +
                          w.w_h * std::exp(-w.a_h * eh);
  return w.energy_bonus ? tracking + w.w_e * energy : tracking - w.w_e * energy;
}

Features featurize(const MotionFrame& state, std::span<const MotionFrame> targets) {
  if (targets.empty()) throw Error(ErrorCode::InvalidArgument, "featurize needs at least one target");
  const std::size_t J = state.joints.size();
  const UnitQuat& root_q = state.root.rotation;
  const Vec3& root_p = state.root.translation;
  auto put_quat = [](Eigen::VectorXd& v, Eigen::Index& i, const UnitQuat& q) {
    v(i++) = q.w();
    v(i++) = q.x();
    v(i++) = q.y();
    v(i++) = q.z();
  };
  auto put_vec = [](Eigen::VectorXd& v, Eigen::Index& i, const Vec3& x) {
    v.segment<3>(i) = x;
    i += 3;
  };

  Features f;
  f.state.resize(static_cast<Eigen::Index>(J) * kStateFeaturesPerJoint);
  Eigen::Index i = 0;
  for (const auto& j : state.joints) {
    put_quat(f.state, i, quat_sub(j.rotation, root_q));
    put_vec(f.state, i, root_q.inverse_rotate(j.position - root_p));
    put_vec(f.state, i, root_q.inverse_rotate(j.linear_velocity));
    put_vec(f.state, i, root_q.inverse_rotate(j.angular_velocity));
  }

  f.goal.resize(static_cast<Eigen::Index>(targets.size() * J) * kGoalFeaturesPerJoint);
  i = 0;
  for (const auto& target : targets) {
    if (target.joints.size() != J) throw Error(ErrorCode::LengthMismatch, "target joint count differs");
    for (std::size_t j = 0; j < J; ++j) {
      const auto& cur = state.joints[j];
      const auto& goal = target.joints[j];
      put_quat(f.goal, i, quat_sub(goal.rotation, cur.rotation));
      put_quat(f.goal, i, quat_sub(goal.rotation, root_q));
      put_vec(f.goal, i, root_q.inverse_rotate(goal.position - cur.position));
      put_vec(f.goal, i, root_q.inverse_rotate(goal.position - root_p));
    }
  }
  return f;
}

bool early_termination(const MotionFrame& sim, const MotionFrame& ref, double threshold) {
  if (sim.joints.size() != ref.joints.size()) {
    throw Error(ErrorCode::LengthMismatch, "simulated and reference joint counts differ");
  }
  for (std::size_t j = 0; j < sim.joints.size(); ++j) {
    if ((sim.joints[j].position - ref.joints[j].position).norm() > threshold) return true;
  }
  return false;
}

// ---------------------------------------------------------------- matching

std::vector<int> hungarian(const Eigen::MatrixXd& cost_in) {
  const bool transposed = cost_in.rows() > cost_in.cols();
  const Eigen::MatrixXd cost = transposed ? Eigen::MatrixXd(cost_in.transpose()) : cost_in;
  const auto n = static_cast<std::size_t>(cost.rows());
  const auto m = static_cast<std::size_t>(cost.cols());
  const double inf = std::numeric_limits<double>::infinity();
  // Potentials formulation, 1-based with a virtual column 0.
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost(static_cast<Eigen::Index>(i0 - 1), static_cast<Eigen::Index>(j - 1)) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(n, -1);
  for (std::size_t j = 1; j <= m; ++j) {
    if (p[j] != 0) row_to_col[p[j] - 1] = static_cast<int>(j - 1);
  }
  if (!transposed) return row_to_col;
  std::vector<int> out(static_cast<std::size_t>(cost_in.rows()), -1);
  for (std::size_t r = 0; r < n; ++r) {
    if (row_to_col[r] >= 0) out[static_cast<std::size_t>(row_to_col[r])] = static_cast<int>(r);
  }
  return out;
}

std::vector<PlaneMatch> match_planes(std::span<const Plane3> gt, std::span<const Plane3> recon,
                                     double max_angle, double max_offset) {
  std::vector<PlaneMatch> out;
  if (gt.empty() || recon.empty()) return out;
  constexpr double kBlocked = 1e6;
  Eigen::MatrixXd cost(static_cast<Eigen::Index>(gt.size()), static_cast<Eigen::Index>(recon.size()));
  for (std::size_t i = 0; i < gt.size(); ++i) {
    for (std::size_t j = 0; j < recon.size(); ++j) {
      const double a = plane_angle(gt[i], recon[j]);
      const double o = plane_offset_error(gt[i], recon[j]);
      cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          (a < max_angle && o < max_offset) ? a / max_angle + o / max_offset : kBlocked;
    }
  }
  const std::vector<int> assign = hungarian(cost);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (assign[i] < 0) continue;
    const auto j = static_cast<std::size_t>(assign[i]);
    if (cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) >= kBlocked) continue;
    out.push_back({i, j, plane_angle(gt[i], recon[j]), plane_offset_error(gt[i], recon[j])});
  }
  return out;
}

// ---------------------------------------------------------------- meshes

namespace {

void add_polygon(TriangleMesh& mesh, const std::vector<int>& idx) {
  for (std::size_t k = 1; k + 1 < idx.size(); ++k) mesh.triangles.emplace_back(idx[0], idx[k], idx[k + 1]);
}

TriangleMesh load_obj(std::istream& in) {
  TriangleMesh mesh;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "v") {
      Vec3 p;
      if (!(ss >> p.x() >> p.y() >> p.z())) throw Error(ErrorCode::ManifestParse, "bad OBJ vertex: " + line);
      mesh.vertices.push_back(p);
    } else if (tag == "f") {
      std::vector<int> idx;
      std::string tok;
      while (ss >> tok) {
        const int k = std::stoi(tok.substr(0, tok.find('/')));
        idx.push_back(k > 0 ? k - 1 : static_cast<int>(mesh.vertices.size()) + k);
      }
      add_polygon(mesh, idx);
    }
  }
  return mesh;
}

TriangleMesh load_ply(std::istream& in) {
  std::string line;
  std::getline(in, line);
  if (line.rfind("ply", 0) != 0) throw Error(ErrorCode::ManifestParse, "missing PLY magic");
  std::size_t nv = 0, nf = 0;
  bool ascii = false;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string a, b;
    ss >> a;
    if (a == "format") {
      ss >> b;
      ascii = b == "ascii";
    } else if (a == "element") {
      std::size_t n = 0;
      ss >> b >> n;
      if (b == "vertex") nv = n;
      if (b == "face") nf = n;
    } else if (a == "end_header") {
      break;
    }
  }
  if (!ascii) throw Error(ErrorCode::UnknownFormat, "only ASCII PLY is supported");
  TriangleMesh mesh;
  for (std::size_t i = 0; i < nv; ++i) {
    std::getline(in, line);
    std::istringstream ss(line);
    Vec3 p;
    if (!(ss >> p.x() >> p.y() >> p.z())) throw Error(ErrorCode::ManifestParse, "bad PLY vertex");
    mesh.vertices.push_back(p);
  }
  for (std::size_t i = 0; i < nf; ++i) {
    std::getline(in, line);
    std::istringstream ss(line);
    std::size_t k = 0;
    ss >> k;
    std::vector<int> idx(k);
    for (auto& x : idx) ss >> x;
    if (!ss) throw Error(ErrorCode::ManifestParse, "bad PLY face");
    add_polygon(mesh, idx);
  }
  return mesh;
}

}  // namespace

TriangleMesh load_mesh(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open mesh " + path.string());
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  TriangleMesh mesh;
  if (ext == ".obj") {
    mesh = load_obj(in);
  } else if (ext == ".ply") {
    mesh = load_ply(in);
  } else {
    throw Error(ErrorCode::UnknownFormat, "unsupported mesh extension " + ext);
  }
  for (const auto& t : mesh.triangles) {
    if (t.minCoeff() < 0 || t.maxCoeff() >= static_cast<int>(mesh.vertices.size())) {
      throw Error(ErrorCode::ShapeMismatch, "mesh face index out of range");
    }
  }
  return mesh;
}

TriangleMesh primitives_mesh(std::span<const Primitive> primitives) {
  static constexpr int kFaces[12][3] = {{0, 2, 3}, {0, 3, 1}, {4, 5, 7}, {4, 7, 6}, {0, 1, 5}, {0, 5, 4},
                                        {2, 6, 7}, {2, 7, 3}, {0, 4, 6}, {0, 6, 2}, {1, 3, 7}, {1, 7, 5}};
  TriangleMesh mesh;
  for (const auto& prim : primitives) {
    const int base = static_cast<int>(mesh.vertices.size());
    for (const auto& c : prim.corners()) mesh.vertices.push_back(c);
    for (const auto& f : kFaces) mesh.triangles.emplace_back(base + f[0], base + f[1], base + f[2]);
  }
  return mesh;
}

namespace {
double triangle_area(const TriangleMesh& mesh, const Eigen::Vector3i& t) {
  const Vec3& a = mesh.vertices[static_cast<std::size_t>(t.x())];
  const Vec3& b = mesh.vertices[static_cast<std::size_t>(t.y())];
  const Vec3& c = mesh.vertices[static_cast<std::size_t>(t.z())];
  return 0.5 * (b - a).cross(c - a).norm();
}
}  // namespace

double mesh_area(const TriangleMesh& mesh) {
  double sum = 0.0;
  for (const auto& t : mesh.triangles) sum += triangle_area(mesh, t);
  return sum;
}

std::vector<Vec3> sample_surface(const TriangleMesh& mesh, std::size_t count, std::uint64_t seed) {
  std::vector<double> cumulative;
  cumulative.reserve(mesh.triangles.size());
  double total = 0.0;
  for (const auto& t : mesh.triangles) {
    total += triangle_area(mesh, t);
    cumulative.push_back(total);
  }
  if (!(total > 0.0)) throw Error(ErrorCode::EmptySet, "mesh has no surface area");
  Rng rng(seed);
  std::vector<Vec3> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double r = rng.uniform() * total;
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), r);
    if (it == cumulative.end()) --it;
    const auto& t = mesh.triangles[static_cast<std::size_t>(it - cumulative.begin())];
    const double s = std::sqrt(rng.uniform());
    const double b = rng.uniform();
    const Vec3& A = mesh.vertices[static_cast<std::size_t>(t.x())];
    const Vec3& B = mesh.vertices[static_cast<std::size_t>(t.y())];
    const Vec3& C = mesh.vertices[static_cast<std::size_t>(t.z())];
    out.push_back((1.0 - s) * A + s * (1.0 - b) * B + s * b * C);
  }
  return out;
}

}  // namespace crisp
