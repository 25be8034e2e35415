// crownpipe command line: one subcommand per pipeline stage plus a one-shot
// `pipeline` run. Exit codes: 0 ok, 1 runtime error, 2 usage error.

#include <cmath>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "crownpipe/config.hpp"
#include "crownpipe/error.hpp"
#include "crownpipe/pipeline.hpp"
#include "crownpipe/project.hpp"
#include "crownpipe/service.hpp"
#include "crownpipe/synthetic.hpp"
#include "crownpipe/terrain.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace crownpipe;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

void print_error(const std::string& kind, const std::string& message) {
  std::cerr << json{{"error", {{"type", kind}, {"message", message}}}}.dump() << '\n';
}

// Flags override the config file, so it must be loaded before the flags
// bind to its fields.
std::optional<fs::path> find_config_arg(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--config" && i + 1 < argc) return fs::path(argv[i + 1]);
    if (a.rfind("--config=", 0) == 0) return fs::path(a.substr(9));
  }
  return std::nullopt;
}

Rgb to_rgb(const std::vector<int>& v) {
  if (v.size() != 3) throw PreconditionError("--fill expects r,g,b");
  Rgb c{};
  for (std::size_t i = 0; i < 3; ++i) {
    if (v[i] < 0 || v[i] > 255) throw PreconditionError("--fill components must be 0..255");
    c[i] = static_cast<std::uint8_t>(v[i]);
  }
  return c;
}

service::Service* g_service = nullptr;

extern "C" void on_signal(int) {
  if (g_service) g_service->stop();
}

}  // namespace

int main(int argc, char** argv) {
  config::PipelineConfig cfg;
  try {
    if (const auto path = find_config_arg(argc, argv)) cfg = config::load_config(*path);
  } catch (const std::exception& e) {
    print_error("config", e.what());
    return kExitUsage;
  }

  CLI::App app{"crownpipe: tree-crown segmentation, labeling and classification"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path;
  app.add_option("--config", config_path, "JSON config supplying defaults for every flag");

  std::vector<int> fill{cfg.fill[0], cfg.fill[1], cfg.fill[2]};
  std::vector<double> weights(cfg.weights.begin(), cfg.weights.end());
  std::optional<std::uint64_t> seed;

  // synth
  auto* synth = app.add_subcommand("synth", "Generate the synthetic four-species test scene");
  fs::path synth_out = "scene";
  synthetic::SceneSpec scene_spec = cfg.synthetic.value_or(synthetic::SceneSpec{});
  synth->add_option("--out", synth_out, "Output directory")->capture_default_str();
  synth->add_option("--size", scene_spec.size, "Scene side in pixels")->capture_default_str();
  synth->add_option("--seed", seed, "Random seed");

  // slope
  auto* slope_cmd = app.add_subcommand("slope", "Derive the slope layer (degrees) from a DEM");
  fs::path slope_dem, slope_out;
  slope_cmd->add_option("--dem", slope_dem, "Input DEM (ESRI ASCII grid)")->required();
  slope_cmd->add_option("--out", slope_out, "Output slope grid")->required();

  // segment
  auto* seg = app.add_subcommand("segment", "Multiresolution segmentation into a project directory");
  fs::path seg_out;
  seg->add_option("--ortho", cfg.ortho, "Orthomosaic PNG with .grid.json sidecar")
      ->required(cfg.ortho.empty());
  seg->add_option("--dem", cfg.dem, "DEM (ESRI ASCII grid)")->required(cfg.dem.empty());
  seg->add_option("--slope", cfg.slope, "Slope grid; derived from the DEM when omitted");
  seg->add_option("--scale", cfg.merge.scale, "Scale parameter")->capture_default_str();
  seg->add_option("--shape", cfg.merge.shape_weight, "Shape weight")->capture_default_str();
  seg->add_option("--compactness", cfg.merge.compactness_weight, "Compactness weight")
      ->capture_default_str();
  seg->add_option("--weights", weights, "Layer weights R,G,B,DEM,SLOPE")
      ->delimiter(',')
      ->expected(5);
  seg->add_option("--out", seg_out, "Project directory")->required();

  // label
  auto* label = app.add_subcommand("label", "Serve the labeling API or auto-label from a truth raster");
  fs::path label_project, label_truth, webui_dir;
  bool serve = false;
  std::optional<int> port;
  label->add_option("--project", label_project, "Project directory")->required();
  label->add_flag("--serve", serve, "Run the HTTP labeling service");
  label->add_option("--port", port, "Port (default $CROWNPIPE_PORT or 8964)");
  label->add_option("--webui", webui_dir, "Static web UI directory served at /");
  label->add_option("--truth", label_truth, "Per-pixel class raster; writes majority labels");
  label->add_option("--min-purity", cfg.min_purity,
                    "Report truth-labeled segments whose majority share is below this")
      ->capture_default_str();

  // extract
  auto* extract = app.add_subcommand("extract", "Extract masked crown crops from a labeled project");
  fs::path extract_project, extract_out;
  std::vector<segmentation::SegmentId> reject(cfg.reject.begin(), cfg.reject.end());
  extract->add_option("--project", extract_project, "Project directory")->required();
  extract->add_option("--min-pixels", cfg.min_pixels, "Drop segments smaller than this")
      ->capture_default_str();
  extract->add_option("--reject", reject, "Segment ids to drop")->delimiter(',');
  extract->add_option("--fill", fill, "Fill colour r,g,b")->delimiter(',')->expected(3);
  extract->add_option("--out", extract_out, "Crop directory")->required();

  // split
  auto* split_cmd = app.add_subcommand("split", "Assign train/val/test per class");
  fs::path split_crops;
  split_cmd->add_option("--crops", split_crops, "Crop directory")->required();
  split_cmd->add_option("--seed", seed, "Random seed");

  // augment
  auto* aug = app.add_subcommand("augment", "Add augmented copies of train/val crops");
  fs::path aug_crops;
  aug->add_option("--crops", aug_crops, "Crop directory")->required();
  aug->add_option("--copies", cfg.augment.copies, "Copies per original")->capture_default_str();
  aug->add_option("--seed", seed, "Random seed");
  aug->add_option("--fill", fill, "Fill colour r,g,b")->delimiter(',')->expected(3);

  // train
  auto* train = app.add_subcommand("train", "Train the crown classifier");
  fs::path train_manifest, model_out = "model.bin", history_out = "history.csv";
  train->add_option("--manifest", train_manifest, "Crop manifest CSV")->required();
  train->add_option("--epochs", cfg.train.epochs, "Training epochs")->capture_default_str();
  train->add_option("--lr", cfg.train.base_lr, "Base learning rate")->capture_default_str();
  train->add_option("--batch-size", cfg.train.batch_size, "Mini-batch size")->capture_default_str();
  train->add_option("--input-side", cfg.model.input_side, "Network input side")
      ->capture_default_str();
  train->add_option("--seed", seed, "Random seed");
  train->add_option("--fill", fill, "Padding colour r,g,b")->delimiter(',')->expected(3);
  train->add_option("--model-out", model_out, "Model file")->capture_default_str();
  train->add_option("--history", history_out, "Per-epoch history CSV")->capture_default_str();

  // eval
  auto* eval = app.add_subcommand("eval", "Confusion matrix and accuracies on one split");
  fs::path eval_model, eval_manifest, report_json;
  eval->add_option("--model", eval_model, "Model file")->required();
  eval->add_option("--manifest", eval_manifest, "Crop manifest CSV")->required();
  eval->add_option("--split", cfg.eval_split, "train, val or test")->capture_default_str();
  eval->add_option("--fill", fill, "Padding colour r,g,b")->delimiter(',')->expected(3);
  eval->add_option("--json", report_json, "Also write the JSON report here");

  // pipeline
  auto* pipe = app.add_subcommand("pipeline", "Run every stage from a config file");
  pipe->add_option("--out", cfg.output_dir, "Output directory")->capture_default_str();
  pipe->add_option("--seed", seed, "Random seed for every stage");
  pipe->add_option("--epochs", cfg.train.epochs, "Training epochs")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == static_cast<int>(CLI::ExitCodes::Success)) {
      app.exit(e);
      return kExitOk;
    }
    print_error("usage", e.what());
    const auto subs = app.get_subcommands();
    std::cerr << (subs.empty() ? app.help() : subs.front()->help());
    return kExitUsage;
  }

  try {
    cfg.fill = to_rgb(fill);
    if (weights.size() != 5) throw PreconditionError("--weights expects 5 values");
    std::copy(weights.begin(), weights.end(), cfg.weights.begin());
    cfg.reject = {reject.begin(), reject.end()};
    if (seed) {
      config::set_seed(cfg, *seed);
      scene_spec.seed = *seed;
    }
    cfg.augment.fill = cfg.fill;

    if (*synth) {
      const auto paths = synthetic::write_scene(synthetic::generate_scene(scene_spec), synth_out);
      std::cout << json{{"ortho", paths.ortho.string()},
                        {"dem", paths.dem.string()},
                        {"truth", paths.truth.string()}}
                       .dump(2)
                << '\n';
    } else if (*slope_cmd) {
      const auto s = terrain::slope(raster::load_dem(slope_dem));
      raster::write_ascii_grid(slope_out, s.band());
      std::cout << json{{"slope", slope_out.string()}}.dump(2) << '\n';
    } else if (*seg) {
      const auto map =
          project::create_project(seg_out, cfg.ortho, cfg.dem, cfg.slope, cfg.weights, cfg.merge);
      std::cout << json{{"project", seg_out.string()}, {"segments", map.segment_count()}}.dump(2)
                << '\n';
    } else if (*label) {
      if (!label_truth.empty()) {
        auto proj = project::Project::load(label_project);
        auto labels = pipeline::auto_label(
            proj.segments(), raster::read_int_ascii_grid(label_truth), cfg.min_purity);
        proj.labels() = std::move(labels.store);
        proj.save_labels();
        std::cout << json{{"labels", proj.labels_path().string()},
                          {"records", proj.labels().size()},
                          {"impure", labels.impure}}
                         .dump(2)
                  << '\n';
      }
      if (serve) {
        service::Options opts;
        opts.port = port || std::getenv("CROWNPIPE_PORT") ? service::resolve_port(port) : cfg.port;
        opts.webui_dir = webui_dir;
        opts.export_min_pixels = cfg.min_pixels;
        opts.fill = cfg.fill;
        service::Service svc(project::Project::load(label_project), opts);
        g_service = &svc;
        std::signal(SIGINT, on_signal);
        std::signal(SIGTERM, on_signal);
        std::cerr << "serving " << label_project.string() << " on http://" << opts.host << ':'
                  << opts.port << '\n';
        svc.serve();
        g_service = nullptr;
      } else if (label_truth.empty()) {
        print_error("usage", "label needs --serve or --truth");
        std::cerr << label->help();
        return kExitUsage;
      }
    } else if (*extract) {
      const auto report =
          pipeline::extract_stage(extract_project, extract_out, cfg.min_pixels, cfg.reject, cfg.fill);
      json counts = json::object();
      for (const auto& [cls, cc] : report.per_class)
        counts[std::to_string(cls)] = {{"extracted", cc.before}, {"kept", cc.after}};
      std::cout << json{{"manifest", (extract_out / dataset::kManifestName).string()},
                        {"counts", counts},
                        {"warnings", report.warnings}}
                       .dump(2)
                << '\n';
    } else if (*split_cmd) {
      const auto warnings = pipeline::split_stage(split_crops, cfg.split);
      for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
      std::cout << json{{"manifest", (split_crops / dataset::kManifestName).string()},
                        {"warnings", warnings}}
                       .dump(2)
                << '\n';
    } else if (*aug) {
      const auto rows = pipeline::augment_stage(aug_crops, cfg.augment);
      std::cout << json{{"manifest", (aug_crops / dataset::kManifestName).string()},
                        {"images", rows}}
                       .dump(2)
                << '\n';
    } else if (*train) {
      const auto model = pipeline::train_stage(train_manifest, cfg.model, cfg.train, cfg.fill,
                                               model_out, history_out);
      const auto& last = model.history.back();
      std::cout << json{{"model", model_out.string()},
                        {"history", history_out.string()},
                        {"train_loss", last.train_loss},
                        {"val_accuracy", std::isnan(last.val_accuracy) ? json(nullptr)
                                                                       : json(last.val_accuracy)}}
                       .dump(2)
                << '\n';
    } else if (*eval) {
      const auto report = pipeline::eval_stage(eval_model, eval_manifest,
                                               dataset::parse_split(cfg.eval_split), cfg.fill);
      if (!report_json.empty()) {
        std::ofstream out(report_json, std::ios::trunc);
        if (!out) throw IoError("cannot write " + report_json.string());
        out << evaluation::report_json(report) << '\n';
      }
      std::cout << evaluation::report_text(report);
    } else if (*pipe) {
      const auto summary = pipeline::run(cfg, [](const std::string& msg) {
        std::cerr << msg << '\n';
      });
      std::cout << json{{"report", summary.report_json.string()},
                        {"model", summary.model.string()},
                        {"overall_accuracy", summary.overall_accuracy}}
                       .dump(2)
                << '\n';
    }
  } catch (const PreconditionError& e) {
    print_error("precondition", e.what());
    return kExitRuntime;
  } catch (const IoError& e) {
    print_error("io", e.what());
    return kExitRuntime;
  } catch (const std::exception& e) {
    print_error("runtime", e.what());
    return kExitRuntime;
  }
  return kExitOk;
}
