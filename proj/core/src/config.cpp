#include "crownpipe/config.hpp"

#include <algorithm>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string_view>

#include <json.hpp>

#include "crownpipe/error.hpp"

namespace crownpipe::config {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void check_keys(const json& j, std::initializer_list<std::string_view> allowed,
                const std::string& where) {
  if (!j.is_object()) throw PreconditionError("config: " + where + " must be an object");
  for (const auto& [key, value] : j.items())
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw PreconditionError("config: unknown key '" + key + "' in " + where);
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void read_path(const json& j, const char* key, fs::path& out, const fs::path& base) {
  if (!j.contains(key) || j.at(key).is_null()) return;
  const fs::path p(j.at(key).get<std::string>());
  out = p.empty() || p.is_absolute() ? p : (base / p).lexically_normal();
}

std::string path_string(const fs::path& p) { return p.generic_string(); }

}  // namespace

PipelineConfig parse_config(const std::string& json_text, const fs::path& base_dir) {
  PipelineConfig cfg;
  try {
    const auto j = json::parse(json_text);
    check_keys(j,
               {"schema_version", "output_dir", "inputs", "synthetic", "segmentation", "extract",
                "split", "augment", "model", "train", "eval", "service"},
               "top level");
    if (!j.contains("schema_version"))
      throw PreconditionError("config: schema_version is required");
    const int version = j.at("schema_version").get<int>();
    if (version != kSchemaVersion)
      throw PreconditionError("config: unsupported schema_version " + std::to_string(version));

    read_path(j, "output_dir", cfg.output_dir, base_dir);
    if (cfg.output_dir.is_relative()) cfg.output_dir = (base_dir / cfg.output_dir).lexically_normal();

    if (j.contains("inputs")) {
      const auto& in = j.at("inputs");
      check_keys(in, {"ortho", "dem", "slope", "truth", "labels"}, "inputs");
      read_path(in, "ortho", cfg.ortho, base_dir);
      read_path(in, "dem", cfg.dem, base_dir);
      read_path(in, "slope", cfg.slope, base_dir);
      read_path(in, "truth", cfg.truth, base_dir);
      read_path(in, "labels", cfg.labels, base_dir);
    }
    if (j.contains("synthetic") && !j.at("synthetic").is_null()) {
      const auto& s = j.at("synthetic");
      check_keys(s,
                 {"size", "pixel_size", "dem_pixel_size", "min_radius", "max_radius", "spacing",
                  "seed"},
                 "synthetic");
      synthetic::SceneSpec spec;
      read(s, "size", spec.size);
      read(s, "pixel_size", spec.pixel_size);
      read(s, "dem_pixel_size", spec.dem_pixel_size);
      read(s, "min_radius", spec.min_radius);
      read(s, "max_radius", spec.max_radius);
      read(s, "spacing", spec.spacing);
      read(s, "seed", spec.seed);
      cfg.synthetic = spec;
    }
    if (j.contains("segmentation")) {
      const auto& s = j.at("segmentation");
      check_keys(s, {"scale", "shape", "compactness", "weights"}, "segmentation");
      read(s, "scale", cfg.merge.scale);
      read(s, "shape", cfg.merge.shape_weight);
      read(s, "compactness", cfg.merge.compactness_weight);
      read(s, "weights", cfg.weights);
    }
    if (j.contains("extract")) {
      const auto& e = j.at("extract");
      check_keys(e, {"min_pixels", "reject", "fill", "min_purity"}, "extract");
      read(e, "min_pixels", cfg.min_pixels);
      read(e, "reject", cfg.reject);
      read(e, "fill", cfg.fill);
      read(e, "min_purity", cfg.min_purity);
      if (!(cfg.min_purity >= 0.0 && cfg.min_purity <= 1.0))
        throw PreconditionError("config: extract.min_purity must lie in [0, 1]");
    }
    if (j.contains("split")) {
      const auto& s = j.at("split");
      check_keys(s, {"train", "val", "test", "seed"}, "split");
      read(s, "train", cfg.split.train);
      read(s, "val", cfg.split.val);
      read(s, "test", cfg.split.test);
      read(s, "seed", cfg.split.seed);
    }
    if (j.contains("augment")) {
      const auto& a = j.at("augment");
      check_keys(a,
                 {"copies", "rotation_deg", "shift_fraction", "shear_deg", "zoom_min", "zoom_max",
                  "flip_probability", "seed"},
                 "augment");
      read(a, "copies", cfg.augment.copies);
      read(a, "rotation_deg", cfg.augment.rotation_deg);
      read(a, "shift_fraction", cfg.augment.shift_fraction);
      read(a, "shear_deg", cfg.augment.shear_deg);
      read(a, "zoom_min", cfg.augment.zoom_min);
      read(a, "zoom_max", cfg.augment.zoom_max);
      read(a, "flip_probability", cfg.augment.flip_probability);
      read(a, "seed", cfg.augment.seed);
    }
    if (j.contains("model")) {
      const auto& m = j.at("model");
      check_keys(m, {"input_side", "channels", "kernel_size", "pool", "hidden_width"}, "model");
      read(m, "input_side", cfg.model.input_side);
      read(m, "channels", cfg.model.channels);
      read(m, "kernel_size", cfg.model.kernel_size);
      read(m, "pool", cfg.model.pool);
      read(m, "hidden_width", cfg.model.hidden_width);
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      check_keys(t,
                 {"epochs", "lr", "momentum", "weight_decay", "step_size", "gamma", "batch_size",
                  "seed"},
                 "train");
      read(t, "epochs", cfg.train.epochs);
      read(t, "lr", cfg.train.base_lr);
      read(t, "momentum", cfg.train.momentum);
      read(t, "weight_decay", cfg.train.weight_decay);
      read(t, "step_size", cfg.train.step_size);
      read(t, "gamma", cfg.train.gamma);
      read(t, "batch_size", cfg.train.batch_size);
      read(t, "seed", cfg.train.seed);
    }
    if (j.contains("eval")) {
      const auto& e = j.at("eval");
      check_keys(e, {"split"}, "eval");
      read(e, "split", cfg.eval_split);
    }
    if (j.contains("service")) {
      const auto& s = j.at("service");
      check_keys(s, {"port"}, "service");
      read(s, "port", cfg.port);
    }
  } catch (const json::exception& e) {
    throw PreconditionError(std::string("config: ") + e.what());
  }
  cfg.merge.validate();
  cfg.split.validate();
  cfg.augment.validate();
  cfg.model.validate();
  cfg.train.validate();
  dataset::parse_split(cfg.eval_split);
  return cfg;
}

PipelineConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.parent_path());
}

std::string to_json(const PipelineConfig& cfg) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["output_dir"] = path_string(cfg.output_dir);
  j["inputs"] = {{"ortho", path_string(cfg.ortho)},
                 {"dem", path_string(cfg.dem)},
                 {"slope", path_string(cfg.slope)},
                 {"truth", path_string(cfg.truth)},
                 {"labels", path_string(cfg.labels)}};
  if (cfg.synthetic) {
    const auto& s = *cfg.synthetic;
    j["synthetic"] = {{"size", s.size},
                      {"pixel_size", s.pixel_size},
                      {"dem_pixel_size", s.dem_pixel_size},
                      {"min_radius", s.min_radius},
                      {"max_radius", s.max_radius},
                      {"spacing", s.spacing},
                      {"seed", s.seed}};
  }
  j["segmentation"] = {{"scale", cfg.merge.scale},
                       {"shape", cfg.merge.shape_weight},
                       {"compactness", cfg.merge.compactness_weight},
                       {"weights", cfg.weights}};
  j["extract"] = {{"min_pixels", cfg.min_pixels},
                    {"reject", cfg.reject},
                    {"fill", cfg.fill},
                    {"min_purity", cfg.min_purity}};
  j["split"] = {{"train", cfg.split.train},
                {"val", cfg.split.val},
                {"test", cfg.split.test},
                {"seed", cfg.split.seed}};
  j["augment"] = {{"copies", cfg.augment.copies},
                  {"rotation_deg", cfg.augment.rotation_deg},
                  {"shift_fraction", cfg.augment.shift_fraction},
                  {"shear_deg", cfg.augment.shear_deg},
                  {"zoom_min", cfg.augment.zoom_min},
                  {"zoom_max", cfg.augment.zoom_max},
                  {"flip_probability", cfg.augment.flip_probability},
                  {"seed", cfg.augment.seed}};
  j["model"] = {{"input_side", cfg.model.input_side},
                {"channels", cfg.model.channels},
                {"kernel_size", cfg.model.kernel_size},
                {"pool", cfg.model.pool},
                {"hidden_width", cfg.model.hidden_width}};
  j["train"] = {{"epochs", cfg.train.epochs},
                {"lr", cfg.train.base_lr},
                {"momentum", cfg.train.momentum},
                {"weight_decay", cfg.train.weight_decay},
                {"step_size", cfg.train.step_size},
                {"gamma", cfg.train.gamma},
                {"batch_size", cfg.train.batch_size},
                {"seed", cfg.train.seed}};
  j["eval"] = {{"split", cfg.eval_split}};
  j["service"] = {{"port", cfg.port}};
  return j.dump(2);
}

void set_seed(PipelineConfig& cfg, std::uint64_t seed) {
  cfg.split.seed = seed;
  cfg.augment.seed = seed;
  cfg.train.seed = seed;
  if (cfg.synthetic) cfg.synthetic->seed = seed;
}

}  // namespace crownpipe::config
