#include "crisp/ingest.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "crisp/parallel.hpp"

namespace crisp {

static_assert(std::endian::native == std::endian::little,
              "binary dataset layout is little-endian");

namespace fs = std::filesystem;
using nlohmann::json;

std::size_t PointMap::valid_count() const {
  return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), std::uint8_t{1}));
}

double ContactFrame::max_confidence() const {
  double best = 0.0;
  for (const auto& p : points) best = std::max(best, p.confidence);
  return best;
}

Vec3 CameraTrack::ray_direction(std::size_t frame, double u, double v) const {
  const Vec3 cam = intrinsics.triangularView<Eigen::Upper>().solve(Vec3(u, v, 1.0));
  return poses[frame].rotation.rotate(cam);
}

double CameraTrack::depth(std::size_t frame, const Vec3& world) const {
  return poses[frame].apply_inverse(world).z();
}

std::optional<Vec2> CameraTrack::project(std::size_t frame, const Vec3& world) const {
  const Vec3 cam = poses[frame].apply_inverse(world);
  if (!(cam.z() > 0.0)) return std::nullopt;
  const Vec3 h = intrinsics * cam;
  return Vec2(h.x() / h.z(), h.y() / h.z());
}

namespace {

std::string pose_error(std::size_t t) { return "frame " + std::to_string(t); }

template <typename T>
std::vector<T> read_binary(const fs::path& path, std::size_t count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::ShapeMismatch, "missing binary file " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  if (size != count * sizeof(T)) {
    throw Error(ErrorCode::ShapeMismatch, path.string() + ": expected " +
                                              std::to_string(count * sizeof(T)) + " bytes, found " +
                                              std::to_string(size));
  }
  in.seekg(0);
  std::vector<T> out(count);
  in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(size));
  return out;
}

template <typename T>
void write_binary(const fs::path& path, const std::vector<T>& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(T)));
}

json pose_to_json(const SE3& pose) {
  return json::array({pose.rotation.w(), pose.rotation.x(), pose.rotation.y(), pose.rotation.z(),
                      pose.translation.x(), pose.translation.y(), pose.translation.z()});
}

SE3 pose_from_json(const json& j) {
  if (!j.is_array() || j.size() != 7) {
    throw Error(ErrorCode::ManifestParse, "camera_pose must have 7 entries");
  }
  SE3 pose;
  pose.rotation = UnitQuat(j[0].get<double>(), j[1].get<double>(), j[2].get<double>(),
                           j[3].get<double>());
  pose.translation = Vec3(j[4].get<double>(), j[5].get<double>(), j[6].get<double>());
  return pose;
}

json contact_frame_to_json(const ContactFrame& frame) {
  json arr = json::array();
  for (const auto& p : frame.points) {
    arr.push_back({{"vertex_id", p.vertex_id},
                   {"confidence", p.confidence},
                   {"xyz", {p.position.x(), p.position.y(), p.position.z()}}});
  }
  return arr;
}

std::vector<ContactPoint> contact_points_from_json(const json& arr) {
  std::vector<ContactPoint> out;
  for (const auto& item : arr) {
    ContactPoint p;
    p.vertex_id = item.at("vertex_id").get<int>();
    p.confidence = item.at("confidence").get<double>();
    const auto& xyz = item.at("xyz");
    p.position = Vec3(xyz.at(0).get<double>(), xyz.at(1).get<double>(), xyz.at(2).get<double>());
    if (!(p.confidence >= 0.0 && p.confidence <= 1.0)) {
      throw Error(ErrorCode::ShapeMismatch, "contact confidence outside [0, 1]");
    }
    if (!p.position.allFinite()) throw Error(ErrorCode::NonFiniteData, "contact position");
    out.push_back(p);
  }
  return out;
}

std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace

MotionSequence read_motion(std::istream& in) {
  MotionSequence motion;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ss(line);
    std::vector<double> values;
    double x;
    while (ss >> x) values.push_back(x);
    if (!ss.eof()) throw Error(ErrorCode::ManifestParse, "motion line " + std::to_string(line_no));
    if (values.size() < 7 || (values.size() - 7) % 13 != 0) {
      throw Error(ErrorCode::ShapeMismatch, "motion line " + std::to_string(line_no) +
                                                " has " + std::to_string(values.size()) + " values");
    }
    for (double v : values) {
      if (!std::isfinite(v)) {
        throw Error(ErrorCode::NonFiniteData, "motion line " + std::to_string(line_no));
      }
    }
    MotionFrame frame;
    frame.root.rotation = UnitQuat(values[0], values[1], values[2], values[3]);
    frame.root.translation = Vec3(values[4], values[5], values[6]);
    const std::size_t joints = (values.size() - 7) / 13;
    for (std::size_t j = 0; j < joints; ++j) {
      const double* v = values.data() + 7 + 13 * j;
      JointState s;
      s.position = Vec3(v[0], v[1], v[2]);
      s.rotation = UnitQuat(v[3], v[4], v[5], v[6]);
      s.linear_velocity = Vec3(v[7], v[8], v[9]);
      s.angular_velocity = Vec3(v[10], v[11], v[12]);
      frame.joints.push_back(s);
    }
    if (!motion.frames.empty() && frame.joints.size() != motion.joint_count()) {
      throw Error(ErrorCode::ShapeMismatch, "joint count changes at motion line " + std::to_string(line_no));
    }
    motion.frames.push_back(std::move(frame));
  }
  return motion;
}

MotionSequence read_motion_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ShapeMismatch, "missing motion file " + path.string());
  return read_motion(in);
}

void write_motion(std::ostream& out, const MotionSequence& motion) {
  for (const auto& frame : motion.frames) {
    std::string line;
    auto put = [&line](double x) {
      if (!line.empty()) line += ' ';
      line += format_double(x);
    };
    const auto& r = frame.root;
    for (double x : {r.rotation.w(), r.rotation.x(), r.rotation.y(), r.rotation.z(),
                     r.translation.x(), r.translation.y(), r.translation.z()}) {
      put(x);
    }
    for (const auto& j : frame.joints) {
      for (int k = 0; k < 3; ++k) put(j.position[k]);
      for (double x : {j.rotation.w(), j.rotation.x(), j.rotation.y(), j.rotation.z()}) put(x);
      for (int k = 0; k < 3; ++k) put(j.linear_velocity[k]);
      for (int k = 0; k < 3; ++k) put(j.angular_velocity[k]);
    }
    out << line << '\n';
  }
}

void write_motion_file(const fs::path& path, const MotionSequence& motion) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  write_motion(out, motion);
}

void validate_dataset(const Dataset& d) {
  const auto& pm = d.points;
  const std::size_t T = pm.frame_count();
  if (T == 0) throw Error(ErrorCode::ManifestParse, "dataset has no frames");
  if (pm.width <= 0 || pm.height <= 0) throw Error(ErrorCode::ShapeMismatch, "non-positive image size");
  const std::size_t N = pm.pixel_count();
  for (std::size_t t = 0; t < T; ++t) {
    const auto& f = pm.frames[t];
    if (f.points.size() != N || f.valid.size() != N) {
      throw Error(ErrorCode::ShapeMismatch, "point map size, " + pose_error(t));
    }
    for (std::size_t i = 0; i < N; ++i) {
      if (f.valid[i] > 1) throw Error(ErrorCode::ShapeMismatch, "validity mask value not 0/1");
      if (f.valid[i] && !f.points[i].allFinite()) {
        throw Error(ErrorCode::NonFiniteData, "valid point is not finite, " + pose_error(t));
      }
    }
  }
  if (d.cameras.poses.size() != T) throw Error(ErrorCode::ShapeMismatch, "camera pose count != T");
  const Mat3& K = d.cameras.intrinsics;
  if (!(K(0, 0) > 0.0 && K(1, 1) > 0.0) || K(1, 0) != 0.0 || K(2, 0) != 0.0 || K(2, 1) != 0.0 ||
      K(2, 2) != 1.0) {
    throw Error(ErrorCode::ShapeMismatch, "intrinsics must be upper-triangular with positive focal lengths");
  }
  for (const auto& flow : d.flows) {
    if (flow.source == flow.target) throw Error(ErrorCode::ShapeMismatch, "flow with source == target");
    if (flow.source < 0 || flow.target < 0 || static_cast<std::size_t>(flow.source) >= T ||
        static_cast<std::size_t>(flow.target) >= T) {
      throw Error(ErrorCode::ShapeMismatch, "flow frame index out of range");
    }
    if (flow.width != pm.width || flow.height != pm.height || flow.flow.size() != N ||
        flow.covisible.size() != N) {
      throw Error(ErrorCode::ShapeMismatch, "flow shape");
    }
    for (std::size_t i = 0; i < N; ++i) {
      if (flow.covisible[i] && !flow.flow[i].allFinite()) {
        throw Error(ErrorCode::NonFiniteData, "flow vector");
      }
    }
  }
  if (!d.motion.frames.empty() && d.motion.frame_count() != T) {
    throw Error(ErrorCode::ShapeMismatch, "motion frame count != T");
  }
  for (const auto& f : d.motion.frames) {
    if (!f.root.translation.allFinite()) throw Error(ErrorCode::NonFiniteData, "motion root");
    for (const auto& j : f.joints) {
      if (!j.position.allFinite() || !j.linear_velocity.allFinite() || !j.angular_velocity.allFinite()) {
        throw Error(ErrorCode::NonFiniteData, "motion joint");
      }
    }
  }
  if (!d.contacts.frames.empty() && d.contacts.frames.size() != T) {
    throw Error(ErrorCode::ShapeMismatch, "contact frame count != T");
  }
  if (!d.human.empty()) {
    if (d.human.masks.size() != T || d.human.mesh_depth.size() != T) {
      throw Error(ErrorCode::ShapeMismatch, "human observation frame count != T");
    }
    for (std::size_t t = 0; t < T; ++t) {
      if (d.human.masks[t].size() != N || d.human.mesh_depth[t].size() != N) {
        throw Error(ErrorCode::ShapeMismatch, "human observation size");
      }
    }
  }
}

Dataset load_dataset(const fs::path& manifest_path) {
  fs::path manifest_file = manifest_path;
  if (fs::is_directory(manifest_file)) manifest_file /= "manifest.json";
  const fs::path root = manifest_file.parent_path();
  std::ifstream in(manifest_file);
  if (!in) throw Error(ErrorCode::ManifestParse, "cannot open manifest " + manifest_file.string());

  json m;
  try {
    m = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ManifestParse, e.what());
  }

  Dataset d;
  try {
    const auto& dims = m.at("dims");
    const int T = dims.at("T").get<int>();
    const int H = dims.at("H").get<int>();
    const int W = dims.at("W").get<int>();
    const auto& frames = m.at("frames");
    if (T <= 0 || !frames.is_array() || frames.empty()) {
      throw Error(ErrorCode::ManifestParse, "empty frame list");
    }
    if (frames.size() != static_cast<std::size_t>(T)) {
      throw Error(ErrorCode::ManifestParse, "frame records != dims.T");
    }
    if (H <= 0 || W <= 0) throw Error(ErrorCode::ManifestParse, "non-positive image size");
    d.fps = m.value("fps", 30.0);

    const auto& K = m.at("intrinsics");
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) d.cameras.intrinsics(r, c) = K.at(r).at(c).get<double>();
    }

    const std::size_t N = static_cast<std::size_t>(H) * static_cast<std::size_t>(W);
    const std::size_t TN = N * static_cast<std::size_t>(T);
    const auto& files = m.at("files");

    d.points.width = W;
    d.points.height = H;
    const auto xyz = read_binary<float>(root / files.at("points").get<std::string>(), TN * 3);
    const auto valid = read_binary<std::uint8_t>(root / files.at("valid").get<std::string>(), TN);
    d.points.frames.resize(static_cast<std::size_t>(T));
    for (std::size_t t = 0; t < static_cast<std::size_t>(T); ++t) {
      auto& f = d.points.frames[t];
      f.points.resize(N);
      f.valid.assign(valid.begin() + static_cast<std::ptrdiff_t>(t * N),
                     valid.begin() + static_cast<std::ptrdiff_t>((t + 1) * N));
      for (std::size_t i = 0; i < N; ++i) {
        const float* p = xyz.data() + 3 * (t * N + i);
        f.points[i] = Eigen::Vector3f(p[0], p[1], p[2]);
      }
    }

    std::vector<double> speeds;
    for (const auto& rec : frames) {
      d.cameras.poses.push_back(pose_from_json(rec.at("camera_pose")));
      speeds.push_back(rec.value("body_speed", 0.0));
    }

    if (files.contains("human_mask")) {
      const auto mask = read_binary<std::uint8_t>(root / files.at("human_mask").get<std::string>(), TN);
      const auto depth = read_binary<float>(root / files.at("human_depth").get<std::string>(), TN);
      for (std::size_t t = 0; t < static_cast<std::size_t>(T); ++t) {
        const auto b = static_cast<std::ptrdiff_t>(t * N);
        const auto e = static_cast<std::ptrdiff_t>((t + 1) * N);
        d.human.masks.emplace_back(mask.begin() + b, mask.begin() + e);
        d.human.mesh_depth.emplace_back(depth.begin() + b, depth.begin() + e);
      }
    }

    for (const auto& rec : m.value("flows", json::array())) {
      FlowField flow;
      flow.source = rec.at("source").get<int>();
      flow.target = rec.at("target").get<int>();
      flow.width = W;
      flow.height = H;
      const auto uv = read_binary<float>(root / rec.at("flow").get<std::string>(), N * 2);
      flow.covisible = read_binary<std::uint8_t>(root / rec.at("covisibility").get<std::string>(), N);
      flow.flow.resize(N);
      for (std::size_t i = 0; i < N; ++i) flow.flow[i] = Eigen::Vector2f(uv[2 * i], uv[2 * i + 1]);
      d.flows.push_back(std::move(flow));
    }

    if (files.contains("motion")) {
      d.motion = read_motion_file(root / files.at("motion").get<std::string>());
      const int J = dims.value("J", static_cast<int>(d.motion.joint_count()));
      if (static_cast<std::size_t>(J) != d.motion.joint_count()) {
        throw Error(ErrorCode::ShapeMismatch, "motion joint count != dims.J");
      }
    }

    if (files.contains("contacts")) {
      const fs::path path = root / files.at("contacts").get<std::string>();
      std::ifstream cin(path);
      if (!cin) throw Error(ErrorCode::ShapeMismatch, "missing contacts file " + path.string());
      std::string line;
      std::size_t t = 0;
      while (std::getline(cin, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        ContactFrame frame;
        frame.points = contact_points_from_json(json::parse(line));
        frame.body_speed = t < speeds.size() ? speeds[t] : 0.0;
        d.contacts.frames.push_back(std::move(frame));
        ++t;
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ManifestParse, e.what());
  }

  validate_dataset(d);
  return d;
}

void save_dataset(const Dataset& d, const fs::path& dir) {
  validate_dataset(d);
  fs::create_directories(dir / "flows");
  const auto& pm = d.points;
  const std::size_t T = pm.frame_count();
  const std::size_t N = pm.pixel_count();

  std::vector<float> xyz;
  xyz.reserve(T * N * 3);
  Mask valid;
  valid.reserve(T * N);
  for (const auto& f : pm.frames) {
    for (const auto& p : f.points) xyz.insert(xyz.end(), {p.x(), p.y(), p.z()});
    valid.insert(valid.end(), f.valid.begin(), f.valid.end());
  }
  write_binary(dir / "points.f32", xyz);
  write_binary(dir / "valid.u8", valid);

  json files = {{"points", "points.f32"}, {"valid", "valid.u8"}};

  if (!d.human.empty()) {
    Mask mask;
    std::vector<float> depth;
    for (std::size_t t = 0; t < T; ++t) {
      mask.insert(mask.end(), d.human.masks[t].begin(), d.human.masks[t].end());
      depth.insert(depth.end(), d.human.mesh_depth[t].begin(), d.human.mesh_depth[t].end());
    }
    write_binary(dir / "human_mask.u8", mask);
    write_binary(dir / "human_depth.f32", depth);
    files["human_mask"] = "human_mask.u8";
    files["human_depth"] = "human_depth.f32";
  }

  json flows = json::array();
  for (const auto& flow : d.flows) {
    char name[64];
    std::snprintf(name, sizeof name, "flows/%05d_%05d", flow.source, flow.target);
    std::vector<float> uv;
    uv.reserve(N * 2);
    for (const auto& f : flow.flow) uv.insert(uv.end(), {f.x(), f.y()});
    write_binary(dir / (std::string(name) + ".f32"), uv);
    write_binary(dir / (std::string(name) + ".u8"), flow.covisible);
    flows.push_back({{"source", flow.source},
                     {"target", flow.target},
                     {"flow", std::string(name) + ".f32"},
                     {"covisibility", std::string(name) + ".u8"}});
  }

  if (!d.motion.frames.empty()) {
    write_motion_file(dir / "motion.txt", d.motion);
    files["motion"] = "motion.txt";
  }
  if (!d.contacts.frames.empty()) {
    std::ofstream out(dir / "contacts.jsonl");
    for (const auto& frame : d.contacts.frames) out << contact_frame_to_json(frame).dump() << '\n';
    files["contacts"] = "contacts.jsonl";
  }

  json frames = json::array();
  for (std::size_t t = 0; t < T; ++t) {
    json rec = {{"index", t}, {"camera_pose", pose_to_json(d.cameras.poses[t])}};
    if (!d.contacts.frames.empty()) rec["body_speed"] = d.contacts.frames[t].body_speed;
    frames.push_back(rec);
  }

  json K = json::array();
  for (int r = 0; r < 3; ++r) {
    K.push_back({d.cameras.intrinsics(r, 0), d.cameras.intrinsics(r, 1), d.cameras.intrinsics(r, 2)});
  }

  const json manifest = {
      {"format", "crisp-dataset"},
      {"version", 1},
      {"dims", {{"T", T}, {"H", pm.height}, {"W", pm.width}, {"J", d.motion.joint_count()}}},
      {"fps", d.fps},
      {"intrinsics", K},
      {"files", files},
      {"flows", flows},
      {"frames", frames},
  };
  std::ofstream out(dir / "manifest.json");
  if (!out) throw Error(ErrorCode::Io, "cannot write manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
}

double nearest_rank_percentile(std::vector<double> values, double p) {
  if (values.empty()) throw Error(ErrorCode::EmptySet, "percentile of empty set");
  const auto n = values.size();
  auto rank = static_cast<std::size_t>(std::ceil(p * static_cast<double>(n)));
  rank = std::clamp<std::size_t>(rank, 1, n);
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(rank - 1), values.end());
  return values[rank - 1];
}

double recover_metric_scale(const PointMapSequence& points, const HumanObservations& human,
                            const CameraTrack& cameras, ScaleStatistic statistic,
                            std::size_t min_pixels) {
  if (human.masks.size() != points.frame_count() || human.mesh_depth.size() != points.frame_count()) {
    throw Error(ErrorCode::InsufficientOverlap, "no human observations for scale recovery");
  }
  std::vector<double> ratios;
  bool enough = false;
  for (std::size_t t = 0; t < points.frame_count(); ++t) {
    const auto& f = points.frames[t];
    std::size_t used = 0;
    for (std::size_t i = 0; i < f.points.size(); ++i) {
      if (!human.masks[t][i] || !f.valid[i] || !(human.mesh_depth[t][i] > 0.0f)) continue;
      const double z = cameras.depth(t, f.points[i].cast<double>());
      if (!(z > 0.0)) continue;
      ratios.push_back(static_cast<double>(human.mesh_depth[t][i]) / z);
      ++used;
    }
    enough = enough || used >= min_pixels;
  }
  if (!enough) {
    throw Error(ErrorCode::InsufficientOverlap,
                "no frame with " + std::to_string(min_pixels) + " usable human pixels");
  }
  if (statistic == ScaleStatistic::Mean) {
    double sum = 0.0;
    for (double r : ratios) sum += r;
    return sum / static_cast<double>(ratios.size());
  }
  const std::size_t n = ratios.size();
  const auto mid = ratios.begin() + static_cast<std::ptrdiff_t>(n / 2);
  std::nth_element(ratios.begin(), mid, ratios.end());
  if (n % 2 == 1) return *mid;
  const double upper = *mid;
  const double lower = *std::max_element(ratios.begin(), mid);
  return 0.5 * (lower + upper);
}

void apply_metric_scale(PointMapSequence& points, CameraTrack& cameras, double s) {
  if (!(s > 0.0) || !std::isfinite(s)) throw Error(ErrorCode::InvalidArgument, "scale must be positive");
  const float sf = static_cast<float>(s);
  for (auto& f : points.frames) {
    for (auto& p : f.points) p *= sf;
    if (f.depth_cut) *f.depth_cut *= s;
  }
  for (auto& pose : cameras.poses) pose.translation *= s;
}

PointMapSequence filter_points(const PointMapSequence& points, const MotionSequence& motion,
                               const CameraTrack& cameras, const PointFilterOptions& options,
                               int workers) {
  if (motion.frame_count() != points.frame_count()) {
    throw Error(ErrorCode::LengthMismatch, "motion and point maps differ in frame count");
  }
  PointMapSequence out = points;
  const double max_d2 = options.max_pelvis_distance * options.max_pelvis_distance;
  parallel_for(out.frame_count(), workers, [&](std::size_t t) {
    auto& f = out.frames[t];
    std::vector<double> depth(f.points.size(), 0.0);
    std::vector<double> valid_depths;
    for (std::size_t i = 0; i < f.points.size(); ++i) {
      if (!f.valid[i]) continue;
      depth[i] = cameras.depth(t, f.points[i].cast<double>());
      valid_depths.push_back(depth[i]);
    }
    if (valid_depths.empty()) return;
    if (!f.depth_cut) f.depth_cut = nearest_rank_percentile(std::move(valid_depths), options.depth_percentile);
    const Vec3& pelvis = motion.frames[t].pelvis();
    for (std::size_t i = 0; i < f.points.size(); ++i) {
      if (!f.valid[i]) continue;
      if (depth[i] > *f.depth_cut || (f.points[i].cast<double>() - pelvis).squaredNorm() > max_d2) {
        f.valid[i] = 0;
      }
    }
  });
  return out;
}

void despike_points(PointMapSequence& points, const CameraTrack& cameras, int radius, double tolerance,
                    int workers) {
  if (radius <= 0) return;
  const int W = points.width;
  const int H = points.height;
  const auto window = static_cast<std::size_t>((2 * radius + 1) * (2 * radius + 1));
  parallel_for(points.frame_count(), workers, [&](std::size_t t) {
    auto& f = points.frames[t];
    std::vector<double> depth(f.points.size(), 0.0);
    for (std::size_t i = 0; i < f.points.size(); ++i) {
      if (f.valid[i]) depth[i] = cameras.depth(t, f.points[i].cast<double>());
    }
    const Vec3 c = cameras.center(t);
    std::vector<double> local;
    local.reserve(window);
    for (int v = 0; v < H; ++v) {
      for (int u = 0; u < W; ++u) {
        const auto i = static_cast<std::size_t>(v * W + u);
        if (!f.valid[i]) continue;
        local.clear();
        for (int dv = -radius; dv <= radius; ++dv) {
          for (int du = -radius; du <= radius; ++du) {
            const int uu = u + du;
            const int vv = v + dv;
            if (uu < 0 || vv < 0 || uu >= W || vv >= H) continue;
            const auto j = static_cast<std::size_t>(vv * W + uu);
            if (f.valid[j]) local.push_back(depth[j]);
          }
        }
        if (2 * local.size() < window) continue;
        auto mid = local.begin() + static_cast<std::ptrdiff_t>(local.size() / 2);
        std::nth_element(local.begin(), mid, local.end());
        const double med = *mid;
        if (std::abs(depth[i] - med) <= tolerance) continue;
        f.points[i] = (c + med * cameras.ray_direction(t, u, v)).cast<float>();
      }
    }
  });
}

void mask_out_human(PointMapSequence& points, const HumanObservations& human) {
  if (human.empty()) return;
  for (std::size_t t = 0; t < points.frame_count(); ++t) {
    auto& f = points.frames[t];
    for (std::size_t i = 0; i < f.valid.size(); ++i) {
      if (human.masks[t][i]) f.valid[i] = 0;
    }
  }
}

}  // namespace crisp
