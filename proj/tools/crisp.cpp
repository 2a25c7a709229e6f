// crisp command-line driver: fit, eval, synth, export.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "crisp/ingest.hpp"
#include "crisp/log.hpp"
#include "crisp/parallel.hpp"
#include "crisp/pipeline.hpp"
#include "crisp/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace crisp;

namespace {

constexpr int kExitInput = 2;
constexpr int kExitDegenerate = 3;

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::DegenerateInput:
    case ErrorCode::InsufficientPoints:
    case ErrorCode::InsufficientOverlap:
    case ErrorCode::EmptySet:
      return kExitDegenerate;
    default:
      return kExitInput;
  }
}

void write_json(const fs::path& path, const json& doc) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

struct FitArgs {
  std::string dataset;
  std::string out;
  std::string config;
  bool no_contact = false;
  std::optional<std::uint64_t> seed;
  int workers = 0;
};

int cmd_fit(const FitArgs& a) {
  PipelineConfig config;
  if (!a.config.empty()) config = load_config(a.config);
  if (a.no_contact) config.contact.enabled = false;
  if (a.seed) config.set_seed(*a.seed);
  config.validate();
  const int workers = a.workers > 0 ? a.workers : default_workers();

  const Dataset dataset = load_dataset(a.dataset);
  const FitResult result = run_fit(dataset, config, workers);

  fs::create_directories(a.out);
  const json doc = primitives_to_json(result, config);
  write_json(fs::path(a.out) / "primitives.json", doc);
  std::vector<Primitive> prims;
  for (const auto& p : result.primitives) prims.push_back(p.primitive);
  write_primitives_obj(prims, fs::path(a.out) / "primitives.obj");
  write_json(fs::path(a.out) / "run.json", {{"config_hash", config_hash(config)},
                                            {"dataset", fs::absolute(a.dataset).string()},
                                            {"workers", workers},
                                            {"primitive_count", prims.size()},
                                            {"group_count", result.group_count},
                                            {"contact_events", result.contact_events},
                                            {"skipped_contact_events", result.skipped_events},
                                            {"timings_ms", result.timings}});
  log::info("fit", "done", {{"out", a.out}, {"primitives", prims.size()}});
  return 0;
}

struct EvalArgs {
  std::string primitives;
  std::string gt_scene;
  std::string pred_motion;
  std::string gt_motion;
  std::string body_vertices;
  std::string config;
  std::string out;
  double fps = 30.0;
  bool force = false;
};

int cmd_eval(const EvalArgs& a) {
  const json doc = read_json_file(a.primitives);
  const std::string embedded_hash = doc.value("config_hash", "");
  PipelineConfig config;
  if (!a.config.empty()) {
    config = load_config(a.config);
    if (config_hash(config) != embedded_hash) {
      if (!a.force) {
        throw Error(ErrorCode::ConfigMismatch, "eval config hash " + config_hash(config) +
                                                   " differs from the primitives' " + embedded_hash +
                                                   " (use --force to override)");
      }
      log::warn("eval", "config hash mismatch overridden", {{"eval", config_hash(config)}, {"fit", embedded_hash}});
    }
  } else if (doc.contains("config")) {
    merge_json(config, doc.at("config"));
  }

  EvalInputs in;
  in.primitives = primitives_from_json(doc);
  in.fps = a.fps;
  if (!a.gt_scene.empty()) in.gt_scene = load_mesh(a.gt_scene);
  if (!a.pred_motion.empty()) in.pred_motion = read_motion_file(a.pred_motion);
  if (!a.gt_motion.empty()) in.gt_motion = read_motion_file(a.gt_motion);
  if (!a.body_vertices.empty()) in.body_vertices = read_body_vertices(a.body_vertices);

  EvalOutput result = evaluate(in, config);
  result.report["config_hash"] = config_hash(config);
  result.report["primitives_config_hash"] = embedded_hash;

  fs::create_directories(a.out);
  write_json(fs::path(a.out) / "report.json", result.report);
  std::ofstream csv(fs::path(a.out) / "reward.csv");
  csv << "# config_hash " << config_hash(config) << '\n' << "frame,reward\n";
  char buf[64];
  for (std::size_t t = 0; t < result.reward.size(); ++t) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", t, result.reward[t]);
    csv << buf;
  }
  std::cout << result.report.dump(2) << '\n';
  return 0;
}

struct SynthArgs {
  std::string scenario;
  std::string out;
  ScenarioOptions options;
  int workers = 0;
};

int cmd_synth(const SynthArgs& a) {
  const Scenario scenario = parse_scenario(a.scenario);
  const int workers = a.workers > 0 ? a.workers : default_workers();
  const SyntheticDataset data = make_synthetic(scenario, a.options, workers);
  write_synthetic(data, a.out);
  log::info("synth", "wrote dataset", {{"out", a.out}, {"frames", data.dataset.points.frame_count()}});
  return 0;
}

int cmd_export(const std::string& format, const std::string& input, const std::string& out) {
  if (format != "obj" && format != "sim-manifest") {
    throw Error(ErrorCode::UnknownFormat, "export format '" + format + "' (expected obj or sim-manifest)");
  }
  const json doc = read_json_file(input);
  const auto prims = primitives_from_json(doc);
  fs::create_directories(out);
  if (format == "obj") {
    write_primitives_obj(prims, fs::path(out) / "primitives.obj");
  } else {
    write_json(fs::path(out) / "sim_manifest.json", sim_manifest(prims, doc.value("config_hash", "")));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Planar cuboid scene primitives from point maps and human contacts"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Suppress log records");

  FitArgs fit;
  auto* fit_cmd = app.add_subcommand("fit", "Fit primitives to a dataset");
  fit_cmd->add_option("dataset", fit.dataset, "Dataset directory or manifest")->required();
  fit_cmd->add_option("-o,--out", fit.out, "Output directory")->required();
  fit_cmd->add_flag("--no-contact", fit.no_contact, "Disable contact-guided completion");
  fit_cmd->add_option("--config", fit.config, "Config JSON");
  fit_cmd->add_option("--seed", fit.seed, "Set every seed");
  fit_cmd->add_option("--workers", fit.workers, "Worker threads (default: CRISP_WORKERS or all cores)");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate primitives and motion");
  eval_cmd->add_option("--primitives", ev.primitives, "primitives.json")->required();
  eval_cmd->add_option("--gt-scene", ev.gt_scene, "Ground-truth mesh (.obj or ASCII .ply)");
  eval_cmd->add_option("--pred-motion", ev.pred_motion, "Predicted motion");
  eval_cmd->add_option("--gt-motion", ev.gt_motion, "Ground-truth motion");
  eval_cmd->add_option("--body-vertices", ev.body_vertices, "Body vertices per frame (JSON lines)");
  eval_cmd->add_option("--fps", ev.fps, "Motion frame rate")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--config", ev.config, "Config JSON; must match the primitives' config hash");
  eval_cmd->add_flag("--force", ev.force, "Evaluate despite a config hash mismatch");
  eval_cmd->add_option("-o,--out", ev.out, "Output directory")->required();

  SynthArgs sy;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic dataset with ground truth");
  synth_cmd->add_option("--scenario", sy.scenario, "walk | sit | stairs | room")->required();
  synth_cmd->add_option("-o,--out", sy.out, "Output directory")->required();
  synth_cmd->add_option("--sigma", sy.options.sigma, "Range noise, m");
  synth_cmd->add_option("--outliers", sy.options.outliers, "Outlier pixel fraction");
  synth_cmd->add_option("--seed", sy.options.seed, "Noise seed");
  synth_cmd->add_option("--frames", sy.options.frames, "Frame count");
  synth_cmd->add_option("--width", sy.options.width, "Image width");
  synth_cmd->add_option("--height", sy.options.height, "Image height");
  synth_cmd->add_flag("--show-seat", sy.options.show_seat, "sit: render the seat");
  synth_cmd->add_option("--workers", sy.workers, "Worker threads");

  std::string ex_format, ex_input, ex_out;
  auto* export_cmd = app.add_subcommand("export", "Export primitives");
  export_cmd->add_option("--format", ex_format, "obj | sim-manifest")->required();
  export_cmd->add_option("primitives", ex_input, "primitives.json")->required();
  export_cmd->add_option("-o,--out", ex_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitInput;
  }
  log::set_enabled(!quiet);

  try {
    if (*fit_cmd) return cmd_fit(fit);
    if (*eval_cmd) return cmd_eval(ev);
    if (*synth_cmd) return cmd_synth(sy);
    if (*export_cmd) return cmd_export(ex_format, ex_input, ex_out);
  } catch (const Error& e) {
    std::cerr << json{{"error", std::string(to_string(e.code()))}, {"message", e.what()}}.dump() << '\n';
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << json{{"error", "Io"}, {"message", e.what()}}.dump() << '\n';
    return kExitInput;
  }
  return 0;
}
