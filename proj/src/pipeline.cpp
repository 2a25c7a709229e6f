#include "crisp/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "crisp/log.hpp"
#include "crisp/parallel.hpp"
#include "crisp/rng.hpp"

namespace crisp {

namespace fs = std::filesystem;
using nlohmann::json;

// ------------------------------------------------------------------ config

namespace {

void require(bool ok, const char* field) {
  if (!ok) throw Error(ErrorCode::InvalidArgument, std::string("config field out of range: ") + field);
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidArgument, "config section '" + where + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const char* a : allowed) known = known || key == a;
    if (!known) throw Error(ErrorCode::InvalidArgument, "unknown config key '" + where + "." + key + "'");
  }
}

template <typename T>
void take(const json& section, const char* key, T& out) {
  if (auto it = section.find(key); it != section.end()) out = it->get<T>();
}

}  // namespace

void PipelineConfig::validate() const {
  require(filter.depth_percentile > 0.0 && filter.depth_percentile <= 1.0, "filter.depth_percentile");
  require(filter.max_pelvis_distance > 0.0, "filter.max_pelvis_distance");
  require(scale.min_pixels >= 1, "scale.min_pixels");
  require(despike.radius >= 0, "despike.radius");
  require(despike.tolerance > 0.0, "despike.tolerance");
  require(normals.crease_angle_deg > 0.0 && normals.crease_angle_deg <= 180.0, "normals.crease_angle_deg");
  require(normals.smooth_radius >= 0, "normals.smooth_radius");
  require(normals.step >= 1, "normals.step");
  require(normals.smooth_gate_deg > 0.0 && normals.smooth_gate_deg <= 180.0, "normals.smooth_gate_deg");
  require(normals.merge_angle_deg >= 0.0 && normals.merge_angle_deg <= 90.0, "normals.merge_angle_deg");
  require(kmeans.clusters >= 1, "kmeans.clusters");
  require(kmeans.max_iterations >= 1, "kmeans.max_iterations");
  require(kmeans.tolerance >= 0.0, "kmeans.tolerance");
  require(dbscan.eps > 0.0, "dbscan.eps");
  require(dbscan.min_points >= 1, "dbscan.min_points");
  require(dbscan.min_segment_size >= 1, "dbscan.min_segment_size");
  require(!association.strides.empty(), "association.strides");
  for (int s : association.strides) require(s >= 1, "association.strides");
  require(association.min_overlap >= 0.0 && association.min_overlap <= 1.0, "association.min_overlap");
  require(association.min_angle_deg >= 0.0 && association.min_angle_deg <= 180.0, "association.min_angle_deg");
  require(association.max_offset > 0.0, "association.max_offset");
  require(ransac.inlier_tol > 0.0, "ransac.inlier_tol");
  require(ransac.iterations >= 1, "ransac.iterations");
  require(ransac.min_points >= 3, "ransac.min_points");
  require(ransac.max_score_points >= 3, "ransac.max_score_points");
  require(footprint.fill_min >= 0.0 && footprint.fill_min <= 1.0, "footprint.fill_min");
  require(footprint.cell_size > 0.0, "footprint.cell_size");
  require(footprint.max_depth >= 0, "footprint.max_depth");
  require(contact.window >= 1, "contact.window");
  require(contact.min_confidence >= 0.0 && contact.min_confidence <= 1.0, "contact.min_confidence");
  require(contact.max_speed >= 0.0, "contact.max_speed");
  require(contact.min_thickness >= kMinContactThickness, "contact.min_thickness");
  require(eval.penetration_tolerance >= 0.0, "eval.penetration_tolerance");
  require(eval.gt_samples >= 1, "eval.gt_samples");
  require(eval.segment_length >= 2, "eval.segment_length");
  require(eval.min_tail >= 1, "eval.min_tail");
}

void PipelineConfig::set_seed(std::uint64_t seed) {
  seeds.kmeans = seed;
  seeds.ransac = seed;
  seeds.sampling = seed;
}

json to_json(const PipelineConfig& c) {
  return {
      {"scale",
       {{"enabled", c.scale.enabled},
        {"statistic", c.scale.statistic == ScaleStatistic::Median ? "median" : "mean"},
        {"min_pixels", c.scale.min_pixels}}},
      {"filter",
       {{"depth_percentile", c.filter.depth_percentile}, {"max_pelvis_distance", c.filter.max_pelvis_distance}}},
      {"despike", {{"radius", c.despike.radius}, {"tolerance", c.despike.tolerance}}},
      {"normals",
       {{"crease_angle_deg", c.normals.crease_angle_deg},
        {"smooth_radius", c.normals.smooth_radius},
        {"smooth_gate_deg", c.normals.smooth_gate_deg},
        {"merge_angle_deg", c.normals.merge_angle_deg},
        {"step", c.normals.step}}},
      {"kmeans",
       {{"clusters", c.kmeans.clusters},
        {"max_iterations", c.kmeans.max_iterations},
        {"tolerance", c.kmeans.tolerance}}},
      {"dbscan",
       {{"eps", c.dbscan.eps},
        {"min_points", c.dbscan.min_points},
        {"min_segment_size", c.dbscan.min_segment_size},
        {"scale_with_resolution", c.dbscan.scale_with_resolution}}},
      {"association",
       {{"strides", c.association.strides},
        {"min_overlap", c.association.min_overlap},
        {"min_angle_deg", c.association.min_angle_deg},
        {"max_offset", c.association.max_offset},
        {"mode", c.association.mode == OverlapMode::MinSize ? "min" : "iou"}}},
      {"ransac",
       {{"inlier_tol", c.ransac.inlier_tol},
        {"iterations", c.ransac.iterations},
        {"min_points", c.ransac.min_points},
        {"max_score_points", c.ransac.max_score_points}}},
      {"footprint",
       {{"fill_min", c.footprint.fill_min},
        {"cell_size", c.footprint.cell_size},
        {"max_depth", c.footprint.max_depth}}},
      {"contact",
       {{"enabled", c.contact.enabled},
        {"window", c.contact.window},
        {"min_confidence", c.contact.min_confidence},
        {"max_speed", c.contact.max_speed},
        {"min_thickness", c.contact.min_thickness}}},
      {"eval",
       {{"penetration_tolerance", c.eval.penetration_tolerance},
        {"gt_samples", c.eval.gt_samples},
        {"segment_length", c.eval.segment_length},
        {"min_tail", c.eval.min_tail},
        {"energy_bonus", c.eval.energy_bonus}}},
      {"seeds", {{"kmeans", c.seeds.kmeans}, {"ransac", c.seeds.ransac}, {"sampling", c.seeds.sampling}}},
  };
}

void merge_json(PipelineConfig& c, const json& j) {
  try {
    check_keys(j,
               {"scale", "filter", "despike", "normals", "kmeans", "dbscan", "association", "ransac", "footprint", "contact",
                "eval", "seeds"},
               "config");
    if (auto it = j.find("scale"); it != j.end()) {
      check_keys(*it, {"enabled", "statistic", "min_pixels"}, "scale");
      take(*it, "enabled", c.scale.enabled);
      take(*it, "min_pixels", c.scale.min_pixels);
      if (auto s = it->find("statistic"); s != it->end()) {
        const auto v = s->get<std::string>();
        if (v != "median" && v != "mean") throw Error(ErrorCode::InvalidArgument, "scale.statistic must be median|mean");
        c.scale.statistic = v == "median" ? ScaleStatistic::Median : ScaleStatistic::Mean;
      }
    }
    if (auto it = j.find("filter"); it != j.end()) {
      check_keys(*it, {"depth_percentile", "max_pelvis_distance"}, "filter");
      take(*it, "depth_percentile", c.filter.depth_percentile);
      take(*it, "max_pelvis_distance", c.filter.max_pelvis_distance);
    }
    if (auto it = j.find("despike"); it != j.end()) {
      check_keys(*it, {"radius", "tolerance"}, "despike");
      take(*it, "radius", c.despike.radius);
      take(*it, "tolerance", c.despike.tolerance);
    }
    if (auto it = j.find("normals"); it != j.end()) {
      check_keys(*it, {"crease_angle_deg", "smooth_radius", "smooth_gate_deg", "merge_angle_deg", "step"}, "normals");
      take(*it, "crease_angle_deg", c.normals.crease_angle_deg);
      take(*it, "smooth_radius", c.normals.smooth_radius);
      take(*it, "smooth_gate_deg", c.normals.smooth_gate_deg);
      take(*it, "merge_angle_deg", c.normals.merge_angle_deg);
      take(*it, "step", c.normals.step);
    }
    if (auto it = j.find("kmeans"); it != j.end()) {
      check_keys(*it, {"clusters", "max_iterations", "tolerance"}, "kmeans");
      take(*it, "clusters", c.kmeans.clusters);
      take(*it, "max_iterations", c.kmeans.max_iterations);
      take(*it, "tolerance", c.kmeans.tolerance);
    }
    if (auto it = j.find("dbscan"); it != j.end()) {
      check_keys(*it, {"eps", "min_points", "min_segment_size", "scale_with_resolution"}, "dbscan");
      take(*it, "eps", c.dbscan.eps);
      take(*it, "min_points", c.dbscan.min_points);
      take(*it, "min_segment_size", c.dbscan.min_segment_size);
      take(*it, "scale_with_resolution", c.dbscan.scale_with_resolution);
    }
    if (auto it = j.find("association"); it != j.end()) {
      check_keys(*it, {"strides", "min_overlap", "min_angle_deg", "max_offset", "mode"}, "association");
      take(*it, "strides", c.association.strides);
      take(*it, "min_overlap", c.association.min_overlap);
      take(*it, "min_angle_deg", c.association.min_angle_deg);
      take(*it, "max_offset", c.association.max_offset);
      if (auto m = it->find("mode"); m != it->end()) {
        const auto v = m->get<std::string>();
        if (v != "min" && v != "iou") throw Error(ErrorCode::InvalidArgument, "association.mode must be min|iou");
        c.association.mode = v == "min" ? OverlapMode::MinSize : OverlapMode::Iou;
      }
    }
    if (auto it = j.find("ransac"); it != j.end()) {
      check_keys(*it, {"inlier_tol", "iterations", "min_points", "max_score_points"}, "ransac");
      take(*it, "inlier_tol", c.ransac.inlier_tol);
      take(*it, "iterations", c.ransac.iterations);
      take(*it, "min_points", c.ransac.min_points);
      take(*it, "max_score_points", c.ransac.max_score_points);
    }
    if (auto it = j.find("footprint"); it != j.end()) {
      check_keys(*it, {"fill_min", "cell_size", "max_depth"}, "footprint");
      take(*it, "fill_min", c.footprint.fill_min);
      take(*it, "cell_size", c.footprint.cell_size);
      take(*it, "max_depth", c.footprint.max_depth);
    }
    if (auto it = j.find("contact"); it != j.end()) {
      check_keys(*it, {"enabled", "window", "min_confidence", "max_speed", "min_thickness"}, "contact");
      take(*it, "enabled", c.contact.enabled);
      take(*it, "window", c.contact.window);
      take(*it, "min_confidence", c.contact.min_confidence);
      take(*it, "max_speed", c.contact.max_speed);
      take(*it, "min_thickness", c.contact.min_thickness);
    }
    if (auto it = j.find("eval"); it != j.end()) {
      check_keys(*it, {"penetration_tolerance", "gt_samples", "segment_length", "min_tail", "energy_bonus"}, "eval");
      take(*it, "penetration_tolerance", c.eval.penetration_tolerance);
      take(*it, "gt_samples", c.eval.gt_samples);
      take(*it, "segment_length", c.eval.segment_length);
      take(*it, "min_tail", c.eval.min_tail);
      take(*it, "energy_bonus", c.eval.energy_bonus);
    }
    if (auto it = j.find("seeds"); it != j.end()) {
      check_keys(*it, {"kmeans", "ransac", "sampling"}, "seeds");
      take(*it, "kmeans", c.seeds.kmeans);
      take(*it, "ransac", c.seeds.ransac);
      take(*it, "sampling", c.seeds.sampling);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("config: ") + e.what());
  }
  c.validate();
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ManifestParse, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ManifestParse, path.string() + ": " + e.what());
  }
}

PipelineConfig load_config(const fs::path& path) {
  PipelineConfig c;
  merge_json(c, read_json_file(path));
  return c;
}

std::string config_hash(const PipelineConfig& config) {
  const std::string text = to_json(config).dump();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ------------------------------------------------------------------ pipeline

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

struct PartStats {
  std::size_t count = 0;
  double rms = 0.0;
};

PartStats part_stats(const Primitive& prim, std::span<const Vec3> points, double tol, bool restrict_footprint) {
  const Plane3 face = prim.face_plane();
  const Vec3 h = prim.half_extents();
  PartStats s;
  double sum = 0.0;
  for (const auto& p : points) {
    const double d = face.signed_distance(p);
    if (std::abs(d) > tol) continue;
    if (restrict_footprint) {
      const Vec3 l = prim.to_local(p);
      if (std::abs(l.x()) > h.x() + 1e-9 || std::abs(l.y()) > h.y() + 1e-9) continue;
    }
    ++s.count;
    sum += d * d;
  }
  s.rms = s.count ? std::sqrt(sum / static_cast<double>(s.count)) : 0.0;
  return s;
}

}  // namespace

FitResult run_fit(const Dataset& dataset, const PipelineConfig& cfg, int workers, const FitOptions& options) {
  cfg.validate();
  validate_dataset(dataset);
  FitResult result;
  const auto total_start = Clock::now();

  PointMapSequence points = dataset.points;
  CameraTrack cameras = dataset.cameras;
  const int W = points.width;
  const int H = points.height;

  auto t0 = Clock::now();
  if (cfg.scale.enabled && !dataset.human.empty()) {
    result.scale = recover_metric_scale(points, dataset.human, cameras, cfg.scale.statistic, cfg.scale.min_pixels);
    apply_metric_scale(points, cameras, result.scale);
  } else if (cfg.scale.enabled) {
    log::warn("scale", "no human observations; treating the input as metric");
  }
  result.timings["scale"] = ms_since(t0);
  log::info("scale", "metric scale", {{"s", result.scale}, {"ms", result.timings["scale"]}});

  t0 = Clock::now();
  despike_points(points, cameras, cfg.despike.radius, cfg.despike.tolerance, workers);
  if (!dataset.motion.frames.empty()) {
    points = filter_points(points, dataset.motion, cameras, cfg.filter, workers);
  } else {
    log::warn("filter", "no motion; spatial filters skipped");
  }
  mask_out_human(points, dataset.human);
  result.timings["filter"] = ms_since(t0);
  log::info("filter", "filtered point maps", {{"ms", result.timings["filter"]}});

  // Per-frame segmentation.
  t0 = Clock::now();
  SpatialSplitOptions split{cfg.dbscan.eps, cfg.dbscan.min_points, cfg.dbscan.min_segment_size};
  if (cfg.dbscan.scale_with_resolution) split = scale_for_resolution(split, W, H);
  const std::size_t T = points.frame_count();
  std::vector<std::vector<Segment>> segments(T);
  parallel_for(T, workers, [&](std::size_t t) {
    NormalMap normals = estimate_normals(points.frames[t], W, H, cameras.center(t),
                                         NormalOptions{cfg.normals.crease_angle_deg, cfg.normals.step});
    normals = smooth_normals(normals, cfg.normals.smooth_radius, cfg.normals.smooth_gate_deg);
    KMeansOptions km{cfg.kmeans.clusters, stream_key(cfg.seeds.kmeans, t), cfg.kmeans.max_iterations,
                     cfg.kmeans.tolerance};
    NormalClustering clustering;
    try {
      clustering = cluster_normals(normals, km);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::InsufficientPoints) throw;
      return;
    }
    merge_close_clusters(clustering, normals, cfg.normals.merge_angle_deg);
    segments[t] = split_spatial(static_cast<int>(t), points.frames[t], normals, clustering.labels,
                                cfg.kmeans.clusters, split);
  });
  std::size_t segment_count = 0;
  for (const auto& s : segments) segment_count += s.size();
  result.timings["segment"] = ms_since(t0);
  log::info("segment", "per-frame planar segments",
            {{"segments", segment_count}, {"ms", result.timings["segment"]}});

  // Cross-frame association.
  t0 = Clock::now();
  AssociationOptions assoc;
  assoc.strides = cfg.association.strides;
  assoc.min_overlap = cfg.association.min_overlap;
  assoc.min_cosine = std::cos(cfg.association.min_angle_deg * std::numbers::pi / 180.0);
  assoc.mode = cfg.association.mode;
  SegmentGraph graph = build_segment_graph(std::move(segments), dataset.flows, W, H, assoc, workers);
  graph = merge_groups(std::move(graph), assoc.min_overlap, assoc.min_cosine, cfg.association.max_offset);
  result.group_count = graph.group_count;
  result.timings["associate"] = ms_since(t0);
  log::info("associate", "merged segment groups",
            {{"edges", graph.edges.size()}, {"groups", graph.group_count}, {"ms", result.timings["associate"]}});

  // Primitive fitting per group.
  t0 = Clock::now();
  const auto members = graph.group_members();
  std::vector<GroupFit> fits(members.size());
  std::vector<std::vector<FittedPrimitive>> per_group(members.size());
  parallel_for(members.size(), workers, [&](std::size_t g) {
    GroupFit& fit = fits[g];
    fit.group = static_cast<int>(g);
    // Segment normals face the cameras, so the solid lies the other way.
    Vec3 facing = Vec3::Zero();
    for (std::size_t node : members[g]) {
      const Segment& seg = graph.nodes[node];
      facing += static_cast<double>(seg.members.size()) * seg.mean_normal;
      const auto& frame = points.frames[static_cast<std::size_t>(seg.frame)];
      for (int p : seg.members) {
        fit.points.push_back(frame.points[static_cast<std::size_t>(p)].cast<double>());
        fit.refs.push_back({seg.frame, p});
      }
    }
    if (fit.points.size() < cfg.ransac.min_points) return;
    try {
      const RansacOptions ro{cfg.ransac.inlier_tol, cfg.ransac.iterations, stream_key(cfg.seeds.ransac, g),
                             cfg.ransac.max_score_points};
      RansacResult rr = ransac_plane(fit.points, ro);
      if (rr.inliers.size() < cfg.ransac.min_points) return;
      std::vector<Vec3> inliers;
      inliers.reserve(rr.inliers.size());
      for (std::size_t i : rr.inliers) inliers.push_back(fit.points[i]);
      const Primitive prim =
          build_primitive(rr.plane, inliers, {kMinContactThickness, Provenance::Fitted, -facing});
      const SplitOptions so{cfg.footprint.fill_min, cfg.footprint.cell_size, cfg.ransac.min_points,
                            cfg.footprint.max_depth};
      const auto parts = split_footprint(prim, inliers, so);
      for (const auto& part : parts) {
        const PartStats st = part_stats(part, inliers, cfg.ransac.inlier_tol, parts.size() > 1);
        per_group[g].push_back({part, static_cast<int>(g), st.count, st.rms});
      }
      fit.plane = rr.plane;
      fit.inliers = std::move(rr.inliers);
      fit.fitted = true;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::DegenerateInput) throw;
      log::warn("fit", "degenerate group skipped", {{"group", g}, {"points", fit.points.size()}});
    }
    if (!options.keep_groups) {
      fit.points = {};
      fit.refs = {};
    }
  });
  for (auto& prims : per_group) {
    for (auto& p : prims) result.primitives.push_back(std::move(p));
  }
  result.timings["fit"] = ms_since(t0);
  log::info("fit", "fitted primitives", {{"primitives", result.primitives.size()}, {"ms", result.timings["fit"]}});

  // Contact-guided completion.
  t0 = Clock::now();
  if (cfg.contact.enabled && !dataset.contacts.frames.empty()) {
    auto events = filter_contacts(
        dataset.contacts, {cfg.contact.window, cfg.contact.min_confidence, cfg.contact.max_speed});
    for (auto& ev : events) {
      if (static_cast<std::size_t>(ev.frame) < dataset.motion.frames.size()) {
        ev.anchor = dataset.motion.frames[static_cast<std::size_t>(ev.frame)].pelvis();
      }
    }
    const RansacOptions ro{cfg.ransac.inlier_tol, cfg.ransac.iterations, cfg.seeds.ransac,
                           cfg.ransac.max_score_points};
    const CompletionResult comp = complete_from_contacts(events, ro, cfg.contact.min_thickness);
    for (std::size_t k = 0; k < comp.primitives.size(); ++k) {
      const auto& ev = events[comp.source_event[k]];
      const PartStats st = part_stats(comp.primitives[k], ev.points, cfg.ransac.inlier_tol, false);
      result.primitives.push_back({comp.primitives[k], -1, comp.inliers[k], st.rms});
    }
    result.contact_events = events.size();
    result.skipped_events = comp.skipped;
  }
  result.timings["contact"] = ms_since(t0);
  log::info("contact", "contact completion",
            {{"events", result.contact_events}, {"skipped", result.skipped_events}, {"ms", result.timings["contact"]}});

  if (options.keep_groups) {
    result.groups = std::move(fits);
    result.graph = std::move(graph);
  }
  result.timings["total"] = ms_since(total_start);
  return result;
}

// ------------------------------------------------------------------ formats

std::string to_string(Provenance p) { return p == Provenance::Fitted ? "fitted" : "contact"; }

Provenance parse_provenance(const std::string& s) {
  if (s == "fitted") return Provenance::Fitted;
  if (s == "contact") return Provenance::ContactCompleted;
  throw Error(ErrorCode::ManifestParse, "unknown provenance '" + s + "'");
}

namespace {

json vec_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

Vec3 vec_from(const json& j) {
  if (!j.is_array() || j.size() != 3) throw Error(ErrorCode::ManifestParse, "expected a 3-vector");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

json quat_json(const UnitQuat& q) { return {q.w(), q.x(), q.y(), q.z()}; }

}  // namespace

json primitives_to_json(const FitResult& result, const PipelineConfig& config) {
  json prims = json::array();
  for (std::size_t k = 0; k < result.primitives.size(); ++k) {
    const auto& fp = result.primitives[k];
    const Primitive& p = fp.primitive;
    json rot = json::array();
    for (int r = 0; r < 3; ++r) rot.push_back({p.rotation()(r, 0), p.rotation()(r, 1), p.rotation()(r, 2)});
    prims.push_back({
        {"id", k},
        {"provenance", to_string(p.provenance())},
        {"group", fp.group},
        {"quaternion", quat_json(UnitQuat::from_matrix(p.rotation()))},
        {"rotation", rot},
        {"center", vec_json(p.center())},
        {"extents", vec_json(p.extents())},
        {"inlier_count", fp.inliers},
        {"residual", fp.residual},
    });
  }
  return {
      {"format", "crisp-primitives"},
      {"version", 1},
      {"config_hash", config_hash(config)},
      {"config", to_json(config)},
      {"metric_scale", result.scale},
      {"group_count", result.group_count},
      {"contact_events", result.contact_events},
      {"primitives", prims},
  };
}

std::vector<Primitive> primitives_from_json(const json& doc) {
  try {
    if (doc.value("format", "") != "crisp-primitives") {
      throw Error(ErrorCode::ManifestParse, "not a primitive list (format != crisp-primitives)");
    }
    std::vector<Primitive> out;
    for (const auto& rec : doc.at("primitives")) {
      Mat3 r;
      const auto& rows = rec.at("rotation");
      for (int i = 0; i < 3; ++i) r.row(i) = vec_from(rows.at(static_cast<std::size_t>(i))).transpose();
      out.emplace_back(r, vec_from(rec.at("center")), vec_from(rec.at("extents")),
                       parse_provenance(rec.at("provenance").get<std::string>()));
    }
    return out;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ManifestParse, std::string("primitive list: ") + e.what());
  }
}

void write_primitives_obj(std::span<const Primitive> primitives, const fs::path& path) {
  static constexpr int kFaces[6][4] = {{0, 2, 3, 1}, {4, 5, 7, 6}, {0, 1, 5, 4},
                                       {2, 6, 7, 3}, {0, 4, 6, 2}, {1, 3, 7, 5}};
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  char buf[128];
  for (std::size_t k = 0; k < primitives.size(); ++k) {
    const auto& p = primitives[k];
    out << "o prim_" << k << '_' << to_string(p.provenance()) << '\n';
    for (const auto& c : p.corners()) {
      std::snprintf(buf, sizeof buf, "v %.17g %.17g %.17g\n", c.x(), c.y(), c.z());
      out << buf;
    }
    const std::size_t base = 8 * k + 1;
    for (const auto& f : kFaces) {
      out << "f " << base + f[0] << ' ' << base + f[1] << ' ' << base + f[2] << '\n';
      out << "f " << base + f[0] << ' ' << base + f[2] << ' ' << base + f[3] << '\n';
    }
  }
}

std::vector<Primitive> read_primitives_obj(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::vector<std::pair<Provenance, std::vector<Vec3>>> boxes;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "o") {
      std::string name;
      ss >> name;
      const auto us = name.rfind('_');
      boxes.emplace_back(parse_provenance(name.substr(us + 1)), std::vector<Vec3>{});
    } else if (tag == "v") {
      if (boxes.empty()) throw Error(ErrorCode::ManifestParse, "OBJ vertex before any object");
      Vec3 v;
      ss >> v.x() >> v.y() >> v.z();
      boxes.back().second.push_back(v);
    }
  }
  std::vector<Primitive> out;
  for (const auto& [prov, c] : boxes) {
    if (c.size() != 8) throw Error(ErrorCode::ManifestParse, "OBJ box object without 8 vertices");
    Vec3 center = Vec3::Zero();
    for (const auto& v : c) center += v;
    center /= 8.0;
    const Vec3 ex = c[1] - c[0];
    const Vec3 ey = c[2] - c[0];
    const Vec3 ez = c[4] - c[0];
    Mat3 r;
    r << ex.normalized(), ey.normalized(), ez.normalized();
    out.emplace_back(r, center, Vec3(ex.norm(), ey.norm(), ez.norm()), prov);
  }
  return out;
}

json sim_manifest(std::span<const Primitive> primitives, const std::string& hash) {
  json bodies = json::array();
  for (std::size_t k = 0; k < primitives.size(); ++k) {
    const auto& p = primitives[k];
    bodies.push_back({
        {"name", "prim_" + std::to_string(k)},
        {"type", "box"},
        {"provenance", to_string(p.provenance())},
        {"pose", {{"quaternion", quat_json(UnitQuat::from_matrix(p.rotation()))}, {"translation", vec_json(p.center())}}},
        {"half_extents", vec_json(p.half_extents())},
    });
  }
  return {{"format", "crisp-sim-manifest"},
          {"version", 1},
          {"config_hash", hash},
          {"quaternion_order", "wxyz"},
          {"bodies", bodies}};
}

std::vector<Primitive> primitives_from_sim_manifest(const json& manifest) {
  try {
    std::vector<Primitive> out;
    for (const auto& b : manifest.at("bodies")) {
      const auto& q = b.at("pose").at("quaternion");
      const UnitQuat rot(q.at(0).get<double>(), q.at(1).get<double>(), q.at(2).get<double>(), q.at(3).get<double>());
      out.emplace_back(rot.matrix(), vec_from(b.at("pose").at("translation")), 2.0 * vec_from(b.at("half_extents")),
                       parse_provenance(b.at("provenance").get<std::string>()));
    }
    return out;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ManifestParse, std::string("sim manifest: ") + e.what());
  }
}

}  // namespace crisp

// ------------------------------------------------------------------ evaluation

namespace crisp {

std::vector<Vec3> sample_primitives(std::span<const Primitive> primitives, double density, std::uint64_t seed) {
  std::vector<Vec3> out;
  for (std::size_t k = 0; k < primitives.size(); ++k) {
    const TriangleMesh mesh = primitives_mesh(primitives.subspan(k, 1));
    const double area = mesh_area(mesh);
    if (area <= 0.0) continue;
    const auto count = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(density * area)));
    const auto pts = sample_surface(mesh, count, stream_key(seed, k));
    out.insert(out.end(), pts.begin(), pts.end());
  }
  return out;
}

std::vector<std::vector<Vec3>> read_body_vertices(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::vector<std::vector<Vec3>> frames;
  std::string line;
  try {
    while (std::getline(in, line)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      std::vector<Vec3> verts;
      for (const auto& v : json::parse(line)) verts.push_back(vec_from(v));
      frames.push_back(std::move(verts));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ManifestParse, path.string() + ": " + e.what());
  }
  return frames;
}

EvalOutput evaluate(const EvalInputs& in, const PipelineConfig& config) {
  EvalOutput out;
  json& r = out.report;
  r = {{"cd_bi", nullptr},
       {"cd_one_recon_to_gt", nullptr},
       {"cd_one_gt_to_recon", nullptr},
       {"non_pene", nullptr},
       {"w_mpjpe100", nullptr},
       {"wa_mpjpe100", nullptr},
       {"rte", nullptr},
       {"jitter", nullptr},
       {"accel", nullptr}};

  if (in.gt_scene && !in.primitives.empty()) {
    const double gt_area = mesh_area(*in.gt_scene);
    if (gt_area <= 0.0) throw Error(ErrorCode::EmptySet, "ground-truth scene has no surface");
    const auto gt = sample_surface(*in.gt_scene, config.eval.gt_samples, config.seeds.sampling);
    const double density = static_cast<double>(config.eval.gt_samples) / gt_area;
    const auto recon = sample_primitives(in.primitives, density, config.seeds.sampling);
    const ChamferResult cd = chamfer(recon, gt);
    r["cd_bi"] = cd.bidirectional;
    r["cd_one_recon_to_gt"] = cd.recon_to_gt;
    r["cd_one_gt_to_recon"] = cd.gt_to_recon;
    r["recon_samples"] = recon.size();
    r["gt_samples"] = gt.size();
  }

  if (in.body_vertices && !in.body_vertices->empty()) {
    r["non_pene"] = non_penetration(*in.body_vertices, in.primitives, config.eval.penetration_tolerance);
  }

  if (in.pred_motion && in.gt_motion) {
    const auto& pred = *in.pred_motion;
    const auto& gt = *in.gt_motion;
    const SegmentOptions seg{config.eval.segment_length, config.eval.min_tail};
    r["w_mpjpe100"] = world_mpjpe(pred, gt, AlignMode::FirstTwoFrames, seg);
    r["wa_mpjpe100"] = world_mpjpe(pred, gt, AlignMode::FullSegment, seg);
    const TrajectoryMetrics tm = trajectory_metrics(pred, gt, in.fps);
    if (tm.rte) r["rte"] = *tm.rte;
    if (tm.jitter) r["jitter"] = *tm.jitter;
    if (tm.accel) r["accel"] = *tm.accel;

    RewardWeights w;
    w.energy_bonus = config.eval.energy_bonus;
    for (std::size_t t = 0; t < pred.frame_count(); ++t) {
      const std::vector<Vec3> zero(pred.frames[t].joints.size(), Vec3::Zero());
      out.reward.push_back(tracking_reward(pred.frames[t], gt.frames[t], zero, zero, w));
    }
    double sum = 0.0;
    for (double v : out.reward) sum += v;
    r["reward_mean"] = out.reward.empty() ? json(nullptr) : json(sum / static_cast<double>(out.reward.size()));
  }

  r["units"] = {{"cd", "m"},
                {"mpjpe", "mm"},
                {"rte", "% of ground-truth path length"},
                {"jitter", "10 m/s^3, mean |third difference| of pred joints"},
                {"accel", "mm/frame^2, mean |second-difference error|"}};
  r["primitive_count"] = in.primitives.size();
  r["fps"] = in.fps;
  return out;
}

}  // namespace crisp
