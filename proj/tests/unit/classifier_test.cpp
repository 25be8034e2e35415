#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <numeric>

#include "crownpipe/classifier.hpp"
#include "crownpipe/error.hpp"
#include "test_support.hpp"

using namespace crownpipe;
using namespace crownpipe::classifier;
using crownpipe::testing::TempDir;

namespace {

ModelConfig linear_model(int side) {
  ModelConfig cfg;
  cfg.input_side = side;
  cfg.channels = {};
  cfg.hidden_width = 0;
  return cfg;
}

ModelConfig small_cnn() {
  ModelConfig cfg;
  cfg.input_side = 8;
  cfg.channels = {3, 4};
  cfg.hidden_width = 5;
  return cfg;
}

std::vector<GradientSample> random_batch(const ModelConfig& cfg, std::size_t n,
                                         std::uint64_t seed) {
  Network net(cfg);
  Rng rng(seed);
  std::vector<GradientSample> batch(n);
  for (auto& s : batch) {
    s.input.resize(net.input_size());
    for (auto& v : s.input) v = rng.uniform(-0.5, 0.5);
    s.class_index = static_cast<int>(rng.below(7));
  }
  return batch;
}

RgbImage noisy_solid(int side, Rgb base, Rng& rng) {
  RgbImage img(side, side);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      Rgb c = base;
      for (auto& ch : c)
        ch = static_cast<std::uint8_t>(std::clamp<int>(ch + static_cast<int>(rng.below(41)) - 20, 0, 255));
      img.set(x, y, c);
    }
  return img;
}

std::vector<LabeledImage> toy_set(int per_class, int side, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<LabeledImage> out;
  for (int i = 0; i < per_class; ++i) {
    out.push_back({noisy_solid(side, {200, 60, 40}, rng), 1});
    out.push_back({noisy_solid(side, {40, 90, 200}, rng), 5});
  }
  return out;
}

}  // namespace

TEST(LearningRate, StepDownSchedule) {
  const TrainConfig cfg;  // 30 epochs, 0.01, step 33%, gamma 0.1
  EXPECT_DOUBLE_EQ(lr_at(0, cfg), 0.01);
  EXPECT_DOUBLE_EQ(lr_at(9, cfg), 0.01);
  EXPECT_DOUBLE_EQ(lr_at(10, cfg), 0.001);
  EXPECT_DOUBLE_EQ(lr_at(19, cfg), 0.001);
  EXPECT_DOUBLE_EQ(lr_at(20, cfg), 0.0001);
  EXPECT_DOUBLE_EQ(lr_at(29, cfg), 0.0001);
  for (int e = 1; e < 30; ++e) EXPECT_LE(lr_at(e, cfg), lr_at(e - 1, cfg));
  EXPECT_THROW(lr_at(30, cfg), std::out_of_range);
  EXPECT_THROW(lr_at(-1, cfg), std::out_of_range);
}

TEST(LearningRate, Defaults) {
  const TrainConfig cfg;
  EXPECT_EQ(cfg.epochs, 30);
  EXPECT_EQ(cfg.base_lr, 0.01);
  EXPECT_EQ(cfg.step_size, 33.0);
  EXPECT_EQ(cfg.gamma, 0.1);
  EXPECT_EQ(cfg.momentum, 0.9);
}

TEST(GradientCheck, LinearSoftmaxModel) {
  const auto cfg = linear_model(4);
  EXPECT_LT(gradient_check(cfg, random_batch(cfg, 5, 1), 1e-5), 1e-6);
}

TEST(GradientCheck, SmallCnn) {
  const auto cfg = small_cnn();
  EXPECT_LT(gradient_check(cfg, random_batch(cfg, 4, 2), 1e-5), 1e-4);
  auto no_hidden = cfg;
  no_hidden.hidden_width = 0;
  EXPECT_LT(gradient_check(no_hidden, random_batch(no_hidden, 3, 3), 1e-5), 1e-4);
}

TEST(GradientCheck, ZeroInputIsFinite) {
  const auto cfg = small_cnn();
  auto batch = random_batch(cfg, 3, 4);
  for (auto& s : batch) std::fill(s.input.begin(), s.input.end(), 0.0);
  const double err = gradient_check(cfg, batch, 1e-4);
  EXPECT_TRUE(std::isfinite(err));
  Network net(cfg);
  net.initialize(1);
  std::vector<double> grad(net.parameter_count(), 0.0);
  net.loss_and_gradient(batch[0].input, 0, grad);
  for (double g : grad) EXPECT_TRUE(std::isfinite(g));
}

TEST(GradientCheck, EpsilonRange) {
  const auto cfg = linear_model(2);
  EXPECT_THROW(gradient_check(cfg, random_batch(cfg, 1, 1), 1e-7), PreconditionError);
  EXPECT_THROW(gradient_check(cfg, {}, 1e-4), PreconditionError);
}

TEST(Network, InitialLossIsNearLnSeven) {
  ModelConfig cfg;
  cfg.input_side = 16;
  cfg.channels = {8, 16, 16};
  Network net(cfg);
  net.initialize(42);
  Rng rng(5);
  std::vector<double> input(net.input_size());
  double total = 0;
  const int n = 7 * 30;
  for (int i = 0; i < n; ++i) {
    for (auto& v : input) v = rng.uniform() - 0.5;
    total += net.loss(input, i % 7);
  }
  EXPECT_NEAR(total / n, std::log(7.0), 0.05);
}

TEST(Network, ZeroedOutputLayerIsUniform) {
  Network net(small_cnn());
  net.initialize(3);
  net.zero_output_layer();
  std::vector<double> input(net.input_size(), 0.3);
  for (double p : softmax(net.logits(input))) EXPECT_NEAR(p, 1.0 / 7.0, 1e-15);
  EXPECT_NEAR(net.loss(input, 2), std::log(7.0), 1e-12);
}

TEST(Network, SoftmaxSumsToOne) {
  Rng rng(9);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> logits(7);
    for (auto& v : logits) v = rng.uniform(-500, 500);
    const auto p = softmax(logits);
    EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-12);
    for (double v : p) EXPECT_GE(v, 0.0);
  }
}

TEST(Network, RejectsBadShapes) {
  Network net(small_cnn());
  net.initialize(1);
  std::vector<double> wrong(net.input_size() + 1);
  EXPECT_THROW(net.logits(wrong), PreconditionError);
  ModelConfig bad = small_cnn();
  bad.kernel_size = 2;
  EXPECT_THROW(Network{bad}, PreconditionError);
  bad = small_cnn();
  bad.channels = {2, 2, 2, 2};
  EXPECT_THROW(Network{bad}, PreconditionError);
}

TEST(Train, SeparableToyProblem) {
  ModelConfig cfg;
  cfg.input_side = 8;
  cfg.channels = {4};
  cfg.hidden_width = 8;
  TrainConfig tc;
  tc.batch_size = 8;
  const auto train_set = toy_set(20, 8, 1);
  const auto val = toy_set(10, 8, 2);
  const auto model = train(train_set, val, cfg, tc);
  ASSERT_EQ(model.history.size(), 30u);
  EXPECT_GE(model.history.back().val_accuracy, 0.99);
  EXPECT_LT(model.history.back().train_loss, model.history.front().train_loss);
  for (const auto& li : train_set) EXPECT_EQ(predict_class(model, li.image), li.tree_class);
  const auto p = predict(model, val[0].image);
  ASSERT_EQ(p.size(), 7u);
  EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-6);
  EXPECT_EQ(model.classes, (std::vector<int>{1, 5}));
  for (std::size_t e = 0; e < model.history.size(); ++e)
    EXPECT_DOUBLE_EQ(model.history[e].lr, lr_at(static_cast<int>(e), tc));
}

TEST(Train, DeterministicUnderSeed) {
  ModelConfig cfg;
  cfg.input_side = 8;
  cfg.channels = {3};
  cfg.hidden_width = 4;
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 5;
  const auto data = toy_set(6, 8, 3);
  const auto a = train(data, data, cfg, tc);
  const auto b = train(data, data, cfg, tc);
  ASSERT_EQ(a.network.parameter_count(), b.network.parameter_count());
  EXPECT_TRUE(std::equal(a.network.parameters().begin(), a.network.parameters().end(),
                         b.network.parameters().begin()));
  tc.seed = 43;
  const auto c = train(data, data, cfg, tc);
  EXPECT_FALSE(std::equal(a.network.parameters().begin(), a.network.parameters().end(),
                          c.network.parameters().begin()));
}

TEST(Train, Errors) {
  ModelConfig cfg = linear_model(8);
  TrainConfig tc;
  tc.epochs = 1;
  auto data = toy_set(2, 8, 4);
  std::vector<LabeledImage> val = {{data[0].image, 3}};
  EXPECT_THROW(train(data, val, cfg, tc), PreconditionError);
  EXPECT_THROW(train({}, {}, cfg, tc), PreconditionError);
  std::vector<LabeledImage> wrong_size = {{RgbImage(4, 4), 1}};
  EXPECT_THROW(train(wrong_size, {}, cfg, tc), PreconditionError);
  TrainConfig bad;
  bad.gamma = 0;
  EXPECT_THROW(bad.validate(), PreconditionError);
}

TEST(ModelIo, RoundTripAndCorruption) {
  TempDir dir;
  ModelConfig cfg = small_cnn();
  TrainConfig tc;
  tc.epochs = 2;
  const auto data = toy_set(4, 8, 6);
  const auto model = train(data, data, cfg, tc);
  save_model(model, dir / "m.bin");
  const auto back = load_model(dir / "m.bin");
  EXPECT_EQ(back.network.config(), model.network.config());
  EXPECT_EQ(back.classes, model.classes);
  EXPECT_EQ(back.channel_mean, model.channel_mean);
  EXPECT_TRUE(std::equal(back.network.parameters().begin(), back.network.parameters().end(),
                         model.network.parameters().begin()));
  for (const auto& li : data) EXPECT_EQ(predict(back, li.image), predict(model, li.image));

  std::ifstream in(dir / "m.bin", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  EXPECT_EQ(bytes.substr(0, 4), "CRWN");
  std::ofstream(dir / "short.bin", std::ios::binary) << bytes.substr(0, bytes.size() - 9);
  EXPECT_THROW(load_model(dir / "short.bin"), IoError);
  std::string bad = bytes;
  bad[0] = 'X';
  std::ofstream(dir / "bad.bin", std::ios::binary) << bad;
  EXPECT_THROW(load_model(dir / "bad.bin"), IoError);
  EXPECT_THROW(load_model(dir / "missing.bin"), IoError);

  write_history_csv(model.history, dir / "h.csv");
  std::ifstream h(dir / "h.csv");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(h, line)) ++lines;
  EXPECT_EQ(lines, 3u);
}
