#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <numbers>
#include <sstream>
#include <sys/wait.h>

#include "crisp/ingest.hpp"
#include "crisp/pipeline.hpp"
#include "crisp/rng.hpp"
#include "crisp/synth.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace crisp;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const SyntheticDataset& small_stairs() {
  static const SyntheticDataset data = [] {
    ScenarioOptions o;
    o.frames = 20;
    o.width = 128;
    o.height = 128;
    return make_synthetic(Scenario::Stairs, o);
  }();
  return data;
}

const SyntheticDataset& small_sit() {
  static const SyntheticDataset data = [] {
    ScenarioOptions o;
    o.frames = 80;
    o.width = 48;
    o.height = 48;
    return make_synthetic(Scenario::Sit, o);
  }();
  return data;
}

std::vector<Primitive> random_primitives(Rng& rng, std::size_t n) {
  std::vector<Primitive> out;
  for (std::size_t k = 0; k < n; ++k) {
    out.emplace_back(oracle::random_rotation(rng), Vec3(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(0, 2)),
                     Vec3(rng.uniform(0.1, 2), rng.uniform(0.1, 2), rng.uniform(0.05, 0.3)),
                     k % 3 == 0 ? Provenance::ContactCompleted : Provenance::Fitted);
  }
  return out;
}

FitResult as_result(const std::vector<Primitive>& prims) {
  FitResult r;
  for (const auto& p : prims) r.primitives.push_back({p, p.provenance() == Provenance::Fitted ? 0 : -1, 100, 0.001});
  return r;
}

void check_same(const std::vector<Primitive>& a, const std::vector<Primitive>& b, double tol) {
  REQUIRE(a.size() == b.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    CHECK((a[k].rotation() - b[k].rotation()).cwiseAbs().maxCoeff() <= tol);
    CHECK((a[k].center() - b[k].center()).cwiseAbs().maxCoeff() <= tol);
    CHECK((a[k].extents() - b[k].extents()).cwiseAbs().maxCoeff() <= tol);
    CHECK(a[k].provenance() == b[k].provenance());
  }
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Run {
  int code;
  std::string err;
};

Run cli(const std::string& args, const testing::TempDir& dir) {
  const fs::path err = dir / "stderr.txt";
  const std::string cmd = std::string("\"") + CRISP_CLI_PATH + "\" " + args + " > \"" + (dir / "stdout.txt").string() +
                          "\" 2> \"" + err.string() + "\"";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(err)};
}

}  // namespace

// ---------------------------------------------------------------- config

TEST_CASE("config JSON round trip and hash") {
  PipelineConfig a;
  a.kmeans.clusters = 5;
  a.association.strides = {1, 3, 7};
  a.set_seed(42);
  PipelineConfig b;
  merge_json(b, to_json(a));
  CHECK(to_json(b) == to_json(a));
  CHECK(config_hash(a) == config_hash(b));
  CHECK(config_hash(a).size() == 16);
  CHECK(config_hash(a) != config_hash(PipelineConfig{}));
  CHECK(b.seeds.ransac == 42);
  CHECK(b.seeds.sampling == 42);
}

TEST_CASE("config files keep defaults for missing keys and reject unknown ones") {
  testing::TempDir dir("config");
  {
    std::ofstream(dir / "partial.json") << R"({"ransac": {"inlier_tol": 0.03}})";
    std::ofstream(dir / "unknown.json") << R"({"ransac": {"inlier_tolerance": 0.03}})";
    std::ofstream(dir / "range.json") << R"({"kmeans": {"clusters": 0}})";
    std::ofstream(dir / "broken.json") << R"({"ransac": )";
  }
  const PipelineConfig c = load_config(dir / "partial.json");
  CHECK(c.ransac.inlier_tol == 0.03);
  CHECK(c.ransac.iterations == PipelineConfig{}.ransac.iterations);
  CHECK_THROWS_AS(load_config(dir / "unknown.json"), Error);
  CHECK_THROWS_AS(load_config(dir / "range.json"), Error);
  CHECK_THROWS_AS(load_config(dir / "broken.json"), Error);
  CHECK_THROWS_AS(load_config(dir / "absent.json"), Error);
}

TEST_CASE("config validation names out-of-range fields") {
  PipelineConfig c;
  CHECK_NOTHROW(c.validate());
  c.association.min_overlap = 1.5;
  try {
    c.validate();
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidArgument);
    CHECK(std::string(e.what()).find("min_overlap") != std::string::npos);
  }
}

// ---------------------------------------------------------------- formats

TEST_CASE("primitive JSON, OBJ and manifest round trips") {
  Rng rng(5);
  const auto prims = random_primitives(rng, 12);
  const PipelineConfig config;
  const json doc = primitives_to_json(as_result(prims), config);
  CHECK(doc.at("config_hash") == config_hash(config));
  CHECK(doc.at("config") == to_json(config));
  check_same(primitives_from_json(json::parse(doc.dump())), prims, 1e-9);

  testing::TempDir dir("formats");
  write_primitives_obj(prims, dir / "p.obj");
  const auto from_obj = read_primitives_obj(dir / "p.obj");
  REQUIRE(from_obj.size() == prims.size());
  for (std::size_t k = 0; k < prims.size(); ++k) {
    // corners pin the box; axis order is not part of the OBJ
    auto a = prims[k].corners();
    auto b = from_obj[k].corners();
    for (const auto& c : a) {
      double best = 1e9;
      for (const auto& d : b) best = std::min(best, (c - d).norm());
      CHECK(best <= 1e-9);
    }
  }

  const json manifest = sim_manifest(prims, config_hash(config));
  check_same(primitives_from_sim_manifest(json::parse(manifest.dump())), prims, 1e-9);
  CHECK(manifest.at("config_hash") == config_hash(config));
}

TEST_CASE("a unit cube exports as 8 vertices and 12 triangles") {
  testing::TempDir dir("cube");
  const std::vector<Primitive> cube{Primitive(Mat3::Identity(), Vec3(0.5, 0.5, 0.5), Vec3(1, 1, 1))};
  write_primitives_obj(cube, dir / "cube.obj");
  std::ifstream in(dir / "cube.obj");
  std::string line;
  int v = 0, f = 0;
  while (std::getline(in, line)) {
    if (line.rfind("v ", 0) == 0) ++v;
    if (line.rfind("f ", 0) == 0) ++f;
  }
  CHECK(v == 8);
  CHECK(f == 12);
}

TEST_CASE("a 50-primitive scene gives 50 manifest entries") {
  Rng rng(6);
  const auto prims = random_primitives(rng, 50);
  const json m = sim_manifest(prims, "0123456789abcdef");
  CHECK(m.at("bodies").size() == 50);
  for (const auto& b : m.at("bodies")) {
    CHECK(b.at("type") == "box");
    CHECK(b.at("half_extents").size() == 3);
    CHECK(b.at("pose").at("quaternion").size() == 4);
  }
}

TEST_CASE("sample_primitives covers every box surface") {
  Rng rng(7);
  const auto prims = random_primitives(rng, 4);
  const auto pts = sample_primitives(prims, 500.0, 3);
  double area = 0.0;
  for (const auto& p : prims) {
    const Vec3 e = p.extents();
    area += 2.0 * (e.x() * e.y() + e.y() * e.z() + e.x() * e.z());
  }
  CHECK(static_cast<double>(pts.size()) == doctest::Approx(500.0 * area).epsilon(0.02));
  for (const auto& q : pts) {
    double best = 1e9;
    for (const auto& p : prims) best = std::min(best, std::abs(cuboid_signed_distance(q, p)));
    CHECK(best <= 1e-9);
  }
  CHECK(sample_primitives(prims, 500.0, 3) == pts);
}

// ---------------------------------------------------------------- fit

TEST_CASE("run_fit covers the staircase planes") {
  const SyntheticDataset& data = small_stairs();
  const FitResult r = run_fit(data.dataset, PipelineConfig{});
  CHECK(r.scale == doctest::Approx(1.0).epsilon(1e-6));
  std::vector<Plane3> recon;
  for (const auto& p : r.primitives) recon.push_back(p.primitive.face_plane());
  std::vector<Plane3> gt;
  for (const auto& [k, plane] : rendered_planes(data.spec)) gt.push_back(plane);
  const auto matches = match_planes(gt, recon, 2.0 * std::numbers::pi / 180.0, 0.02);
  CHECK(matches.size() == gt.size());
  for (const auto& p : r.primitives) {
    CHECK(p.primitive.provenance() == Provenance::Fitted);
    // the solid lies away from the cameras
    CHECK(p.primitive.normal().dot(p.primitive.face_center() - data.spec.cameras.center(0)) > 0.0);
  }
}

TEST_CASE("run_fit output is identical across worker counts") {
  const SyntheticDataset& data = small_stairs();
  const PipelineConfig config;
  const std::string one = primitives_to_json(run_fit(data.dataset, config, 1), config).dump(2);
  const std::string three = primitives_to_json(run_fit(data.dataset, config, 3), config).dump(2);
  CHECK(one == three);
}

TEST_CASE("contact completion adds the hidden seat and can be disabled") {
  const SyntheticDataset& data = small_sit();
  PipelineConfig config;
  const FitResult with = run_fit(data.dataset, config);
  config.contact.enabled = false;
  const FitResult without = run_fit(data.dataset, config);
  auto completed = [](const FitResult& r) {
    std::vector<Primitive> out;
    for (const auto& p : r.primitives) {
      if (p.primitive.provenance() == Provenance::ContactCompleted) out.push_back(p.primitive);
    }
    return out;
  };
  CHECK(completed(without).empty());
  CHECK(with.contact_events == 1);
  const auto seats = completed(with);
  REQUIRE(seats.size() == 1);
  CHECK(std::abs(seats[0].face_center().z() - 0.45) <= 0.02);
  CHECK(seats[0].normal().z() < -0.99);
}

// ---------------------------------------------------------------- eval

TEST_CASE("evaluate leaves metrics without inputs null") {
  EvalInputs in;
  in.primitives = {Primitive(Mat3::Identity(), Vec3::Zero(), Vec3::Ones())};
  const EvalOutput out = evaluate(in, PipelineConfig{});
  for (const char* key : {"cd_bi", "cd_one_recon_to_gt", "cd_one_gt_to_recon", "non_pene", "w_mpjpe100",
                          "wa_mpjpe100", "rte", "jitter", "accel"}) {
    CAPTURE(key);
    CHECK(out.report.at(key).is_null());
  }
  CHECK(out.reward.empty());
}

TEST_CASE("evaluate on a reconstruction of its own ground truth") {
  Rng rng(8);
  EvalInputs in;
  in.primitives = random_primitives(rng, 5);
  in.gt_scene = primitives_mesh(in.primitives);
  in.pred_motion = small_sit().dataset.motion;
  in.gt_motion = small_sit().dataset.motion;
  PipelineConfig config;
  config.eval.gt_samples = 200000;
  const EvalOutput out = evaluate(in, config);
  CHECK(out.report.at("cd_bi").get<double>() < 0.01);
  CHECK(out.report.at("w_mpjpe100").get<double>() <= 1e-6);
  CHECK(out.report.at("wa_mpjpe100").get<double>() <= 1e-6);
  CHECK(out.report.at("rte").get<double>() <= 1e-6);
  REQUIRE(out.reward.size() == 80);
  for (double r : out.reward) CHECK(r == doctest::Approx(6.0));

  // dropping a box from the reconstruction hurts completeness only
  EvalInputs partial = in;
  partial.primitives.pop_back();
  const json rep = evaluate(partial, config).report;
  CHECK(rep.at("cd_one_recon_to_gt").get<double>() < rep.at("cd_one_gt_to_recon").get<double>());
}

// ---------------------------------------------------------------- CLI

TEST_CASE("cli exit codes for input errors") {
  testing::TempDir dir("cli_errors");
  Run r = cli("fit \"" + (dir / "nowhere").string() + "\" -o \"" + (dir / "out").string() + "\"", dir);
  CHECK(r.code == 2);
  CHECK(r.err.find("ManifestParse") != std::string::npos);

  {
    std::ofstream(dir / "p.json") << primitives_to_json(as_result({}), PipelineConfig{}).dump();
  }
  r = cli("export --format stl \"" + (dir / "p.json").string() + "\" -o \"" + (dir / "x").string() + "\"", dir);
  CHECK(r.code == 2);
  CHECK(r.err.find("UnknownFormat") != std::string::npos);

  r = cli("frobnicate", dir);
  CHECK(r.code == 2);
}

TEST_CASE("cli synth, fit, export and eval") {
  testing::TempDir dir("cli_flow");
  const std::string data = (dir / "data").string();
  const std::string fit = (dir / "fit").string();
  Run r = cli("-q synth --scenario stairs --frames 8 --width 48 --height 48 -o \"" + data + "\"", dir);
  REQUIRE(r.code == 0);
  r = cli("-q fit \"" + data + "\" -o \"" + fit + "\" --seed 3 --workers 2", dir);
  REQUIRE(r.code == 0);
  const json doc = read_json_file(fs::path(fit) / "primitives.json");
  PipelineConfig seeded;
  seeded.set_seed(3);
  CHECK(doc.at("config_hash") == config_hash(seeded));
  CHECK(read_json_file(fs::path(fit) / "run.json").at("config_hash") == config_hash(seeded));
  CHECK(!doc.at("primitives").empty());

  r = cli("-q export --format sim-manifest \"" + fit + "/primitives.json\" -o \"" + (dir / "sim").string() + "\"", dir);
  REQUIRE(r.code == 0);
  const json m = read_json_file(dir / "sim" / "sim_manifest.json");
  CHECK(m.at("bodies").size() == doc.at("primitives").size());
  check_same(primitives_from_sim_manifest(m), primitives_from_json(doc), 1e-9);

  const std::string eval_args = "-q eval --primitives \"" + fit + "/primitives.json\" --gt-scene \"" + data +
                                "/gt/gt_scene.obj\" --pred-motion \"" + data + "/gt/gt_motion.txt\" --gt-motion \"" +
                                data + "/gt/gt_motion.txt\" -o \"" + (dir / "eval").string() + "\"";
  r = cli(eval_args, dir);
  REQUIRE(r.code == 0);
  const json rep = read_json_file(dir / "eval" / "report.json");
  CHECK(rep.at("cd_bi").is_number());
  CHECK(rep.at("w_mpjpe100").get<double>() <= 1e-6);
  CHECK(rep.at("non_pene").is_null());
  CHECK(rep.at("config_hash") == doc.at("config_hash"));

  // an eval config that differs from the fit config is refused unless forced
  { std::ofstream(dir / "other.json") << R"({"ransac": {"iterations": 50}})"; }
  r = cli(eval_args + " --config \"" + (dir / "other.json").string() + "\"", dir);
  CHECK(r.code == 2);
  CHECK(r.err.find("ConfigMismatch") != std::string::npos);
  r = cli(eval_args + " --config \"" + (dir / "other.json").string() + "\" --force", dir);
  CHECK(r.code == 0);
}
