#include "crownpipe/pipeline.hpp"

#include <chrono>
#include <fstream>
#include <map>

#include <json.hpp>

#include "crownpipe/error.hpp"
#include "crownpipe/project.hpp"

namespace crownpipe::pipeline {

namespace fs = std::filesystem;
using dataset::Crop;
using dataset::Split;

AutoLabels auto_label(const segmentation::SegmentMap& map, const raster::IntRaster& truth,
                      double min_purity) {
  const auto& g = map.grid();
  if (truth.grid.width != g.width || truth.grid.height != g.height)
    throw PreconditionError("auto_label: truth raster size differs from the segment map");
  std::map<segmentation::SegmentId, std::array<std::int64_t, labeling::kClassCount + 1>> votes;
  const auto labels = map.labels();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == segmentation::kBackground) continue;
    int cls = truth.values[i];
    if (!labeling::is_valid_class(cls)) cls = labeling::kOthers;
    ++votes[labels[i]][static_cast<std::size_t>(cls)];
  }
  AutoLabels out;
  for (const auto& [id, v] : votes) {
    // Lowest class id wins ties.
    const auto best = std::max_element(v.begin() + 1, v.end());
    out.store.set_sample(id, static_cast<int>(best - v.begin()));
    const auto n = map.stats(id).n;
    if (static_cast<double>(*best) < min_purity * static_cast<double>(n)) out.impure.insert(id);
  }
  return out;
}

dataset::FilterReport extract_stage(const fs::path& project_dir, const fs::path& out_dir,
                                    std::int64_t min_pixels,
                                    const std::set<segmentation::SegmentId>& reject, Rgb fill) {
  const auto proj = project::Project::load(project_dir);
  auto crops = dataset::extract_all(proj.ortho().image, proj.segments(), proj.labels(), fill);
  auto filtered = dataset::filter_crops(std::move(crops), min_pixels, reject);
  if (fs::exists(out_dir)) fs::remove_all(out_dir);
  dataset::write_manifest(filtered.crops, out_dir);
  return filtered.report;
}

std::vector<std::string> split_stage(const fs::path& crops_dir, const dataset::SplitSpec& spec) {
  const auto manifest = crops_dir / dataset::kManifestName;
  auto crops = dataset::load_crops(manifest);
  for (const auto& c : crops)
    if (!c.is_original())
      throw PreconditionError("split: " + manifest.string() +
                              " already holds augmented copies; re-run extract first");
  auto result = dataset::split(std::move(crops), spec);
  dataset::write_manifest(result.crops, crops_dir);
  return result.warnings;
}

std::size_t augment_stage(const fs::path& crops_dir, const dataset::AugmentSpec& spec) {
  const auto manifest = crops_dir / dataset::kManifestName;
  const auto rows = dataset::read_manifest(manifest);
  auto crops = dataset::load_crops(manifest);
  std::vector<Crop> originals;
  for (std::size_t i = 0; i < crops.size(); ++i) {
    if (crops[i].is_original()) {
      if (crops[i].split == Split::Unassigned)
        throw PreconditionError("augment: crops are not split yet; run split first");
      originals.push_back(std::move(crops[i]));
    } else {
      fs::remove(crops_dir / rows[i].path);
    }
  }
  const auto out = dataset::augment_all(originals, spec);
  return dataset::write_manifest(out, crops_dir).size();
}

std::vector<classifier::LabeledImage> load_split(const std::vector<Crop>& crops, Split which,
                                                 int side, Rgb fill) {
  std::vector<classifier::LabeledImage> out;
  for (const auto& c : crops)
    if (c.split == which) out.push_back({dataset::pad_to_square(c.image, side, fill), c.tree_class});
  return out;
}

classifier::TrainedModel train_stage(const fs::path& manifest,
                                     const classifier::ModelConfig& model_cfg,
                                     const classifier::TrainConfig& train_cfg, Rgb fill,
                                     const fs::path& model_out, const fs::path& history_out) {
  const auto crops = dataset::load_crops(manifest);
  const auto train_set = load_split(crops, Split::Train, model_cfg.input_side, fill);
  const auto val_set = load_split(crops, Split::Val, model_cfg.input_side, fill);
  auto model = classifier::train(train_set, val_set, model_cfg, train_cfg);
  if (!model_out.empty()) {
    if (model_out.has_parent_path()) fs::create_directories(model_out.parent_path());
    classifier::save_model(model, model_out);
  }
  if (!history_out.empty()) classifier::write_history_csv(model.history, history_out);
  return model;
}

evaluation::Report eval_stage(const fs::path& model_path, const fs::path& manifest, Split which,
                              Rgb fill) {
  const auto model = classifier::load_model(model_path);
  const auto crops = dataset::load_crops(manifest);
  std::vector<int> truth, predicted;
  for (const auto& c : crops) {
    if (c.split != which || !c.is_original()) continue;
    const auto img = dataset::pad_to_square(c.image, model.network.config().input_side, fill);
    truth.push_back(c.tree_class);
    predicted.push_back(classifier::predict_class(model, img));
  }
  std::vector<int> classes;
  for (const auto& tc : labeling::tree_classes()) classes.push_back(tc.id);
  const auto m = evaluation::confusion(truth, predicted, classes);
  return evaluation::make_report(m, evaluation::TypeMapping::tree_types());
}

namespace {

class Stopwatch {
 public:
  double lap() {
    const auto now = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(now - last_).count();
    last_ = now;
    return s;
  }

 private:
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

}  // namespace

RunSummary run(const config::PipelineConfig& cfg_in, const Logger& log_fn) {
  auto cfg = cfg_in;
  auto log = [&](const std::string& msg) {
    if (log_fn) log_fn(msg);
  };
  RunSummary summary;
  Stopwatch sw;
  auto mark = [&](const std::string& stage) {
    summary.timings.push_back({stage, sw.lap()});
    log(stage + " done in " + std::to_string(summary.timings.back().seconds) + " s");
  };

  const auto& out = cfg.output_dir;
  fs::create_directories(out);

  if (cfg.ortho.empty()) {
    if (!cfg.synthetic) throw PreconditionError("pipeline: no ortho input and no synthetic scene");
    const auto scene = synthetic::generate_scene(*cfg.synthetic);
    const auto paths = synthetic::write_scene(scene, out / "scene");
    cfg.ortho = paths.ortho;
    cfg.dem = paths.dem;
    cfg.slope.clear();
    if (cfg.labels.empty()) cfg.truth = paths.truth;
    mark("synthetic");
  }
  if (cfg.dem.empty()) throw PreconditionError("pipeline: no DEM input");

  const auto project_dir = out / "segments";
  const auto map = project::create_project(project_dir, cfg.ortho, cfg.dem, cfg.slope, cfg.weights,
                                           cfg.merge);
  log("segmentation produced " + std::to_string(map.segment_count()) + " segments");
  mark("segment");

  labeling::LabelStore store;
  if (!cfg.truth.empty()) {
    auto labels = auto_label(map, raster::read_int_ascii_grid(cfg.truth), cfg.min_purity);
    store = std::move(labels.store);
    log(std::to_string(labels.impure.size()) + " mixed segments added to the reject list");
    cfg.reject.insert(labels.impure.begin(), labels.impure.end());
  } else if (!cfg.labels.empty()) {
    store = labeling::LabelStore::load(cfg.labels);
  } else {
    throw PreconditionError("pipeline: labels require a truth raster or a label store");
  }
  store.save(project_dir / project::kLabelsFile);
  mark("label");

  const auto crops_dir = out / "crops";
  const auto report = extract_stage(project_dir, crops_dir, cfg.min_pixels, cfg.reject, cfg.fill);
  for (const auto& w : report.warnings) log("warning: " + w);
  mark("extract");

  for (const auto& w : split_stage(crops_dir, cfg.split)) log("warning: " + w);
  mark("split");

  auto aug = cfg.augment;
  aug.fill = cfg.fill;
  const auto rows = augment_stage(crops_dir, aug);
  log("dataset holds " + std::to_string(rows) + " images");
  mark("augment");

  const auto manifest = crops_dir / dataset::kManifestName;
  summary.model = out / "model.bin";
  train_stage(manifest, cfg.model, cfg.train, cfg.fill, summary.model, out / "history.csv");
  mark("train");

  const auto result = eval_stage(summary.model, manifest, dataset::parse_split(cfg.eval_split),
                                 cfg.fill);
  summary.report_json = out / "report.json";
  summary.report_text = out / "report.txt";
  write_text(summary.report_json, evaluation::report_json(result) + "\n");
  write_text(summary.report_text, evaluation::report_text(result));
  summary.overall_accuracy =
      result.species.total() ? evaluation::overall_accuracy(result.species) : 0.0;
  mark("eval");

  nlohmann::json j;
  j["overall_accuracy"] = summary.overall_accuracy;
  j["segments"] = map.segment_count();
  j["dataset_images"] = rows;
  write_text(out / "summary.json", j.dump(2) + "\n");
  write_text(out / "config.json", config::to_json(cfg) + "\n");
  return summary;
}

}  // namespace crownpipe::pipeline
