#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "crownpipe/image.hpp"

namespace crownpipe::classifier {

// Conv blocks (conv kxk same-padding + ReLU + maxpool) followed by global
// average pooling, an optional hidden fully connected ReLU layer and the
// class layer. With no conv blocks the flattened input feeds the dense layers
// directly, which yields a plain linear-softmax model when hidden_width == 0.
struct ModelConfig {
  int input_side = 64;
  std::vector<int> channels = {16, 32, 64};
  int kernel_size = 3;
  int pool = 2;
  int hidden_width = 32;
  int input_channels = 3;
  int classes = 7;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct TrainConfig {
  int epochs = 30;
  double base_lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0;
  double step_size = 33.0;  // percent of total epochs
  double gamma = 0.1;
  int batch_size = 32;
  std::uint64_t seed = 42;

  void validate() const;
};

// Step-down schedule: base * gamma^floor(epoch / ceil(step_size% * epochs)).
double lr_at(int epoch, const TrainConfig& cfg);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  double lr = 0.0;
};

// Image with a 1-based class id. Images must already be input_side square.
struct LabeledImage {
  RgbImage image;
  int tree_class = 0;
};

class Network {
 public:
  explicit Network(ModelConfig cfg);

  const ModelConfig& config() const noexcept { return cfg_; }
  std::size_t parameter_count() const noexcept { return params_.size(); }
  std::span<double> parameters() noexcept { return params_; }
  std::span<const double> parameters() const noexcept { return params_; }
  std::size_t input_size() const noexcept;

  // He-normal weights, zero biases.
  void initialize(std::uint64_t seed);
  // Zeroes the class layer so every input maps to uniform probabilities.
  void zero_output_layer();

  std::vector<double> logits(std::span<const double> input) const;
  // Cross-entropy of one sample; adds d(loss)/d(params) into `grad`.
  double loss_and_gradient(std::span<const double> input, int class_index,
                           std::span<double> grad) const;
  double loss(std::span<const double> input, int class_index) const;

 private:
  struct ConvLayer {
    int in_c, out_c, side, pooled_side;
    std::size_t w_off, b_off;
  };
  struct DenseLayer {
    int in, out;
    bool relu;
    std::size_t w_off, b_off;
  };
  struct Trace;

  void forward(std::span<const double> input, Trace& trace) const;

  ModelConfig cfg_;
  std::vector<ConvLayer> convs_;
  std::vector<DenseLayer> dense_;
  std::vector<double> params_;
};

std::vector<double> softmax(std::span<const double> logits);

struct TrainedModel {
  Network network;
  std::array<double, 3> channel_mean{};
  std::vector<int> classes;  // class ids seen in training
  std::vector<EpochRecord> history;

  explicit TrainedModel(ModelConfig cfg) : network(std::move(cfg)) {}
};

// Pixels scaled to [0, 1] minus the per-channel mean, CHW layout.
std::vector<double> to_input(const RgbImage& image, const std::array<double, 3>& channel_mean);

// Per-channel mean over the given images, in [0, 1] units.
std::array<double, 3> channel_means(std::span<const LabeledImage> images);

// Mini-batch SGD with momentum on mean cross-entropy. Throws
// PreconditionError if a class present in `val` is absent from `train`, and
// std::runtime_error on a non-finite loss.
TrainedModel train(std::span<const LabeledImage> train_set, std::span<const LabeledImage> val,
                   const ModelConfig& model_cfg, const TrainConfig& train_cfg);

// Probability vector over the 7 tree classes (index = class id - 1).
std::vector<double> predict(const TrainedModel& model, const RgbImage& image);
int predict_class(const TrainedModel& model, const RgbImage& image);

struct GradientSample {
  std::vector<double> input;
  int class_index = 0;
};

// Largest |analytic - numeric| / max(|analytic| + |numeric|, 1e-10) over every
// parameter, using central differences on the mean batch loss.
double gradient_check(const ModelConfig& cfg, std::span<const GradientSample> batch,
                      double epsilon, std::uint64_t seed = 7);

// CRWN container: magic, version, config echo, then little-endian doubles
// (channel means followed by parameters in declaration order).
void save_model(const TrainedModel& model, const std::filesystem::path& path);
TrainedModel load_model(const std::filesystem::path& path);
void write_history_csv(const std::vector<EpochRecord>& history, const std::filesystem::path& path);

}  // namespace crownpipe::classifier
