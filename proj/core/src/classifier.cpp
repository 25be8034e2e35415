#include "crownpipe/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <stdexcept>
#include <string>

#include "crownpipe/error.hpp"
#include "crownpipe/random.hpp"

namespace crownpipe::classifier {

void ModelConfig::validate() const {
  if (input_side <= 0 || kernel_size <= 0 || pool <= 0 || input_channels <= 0 || classes <= 0)
    throw PreconditionError("model config dimensions must be positive");
  if (kernel_size % 2 == 0) throw PreconditionError("kernel size must be odd");
  if (hidden_width < 0) throw PreconditionError("hidden width must be >= 0");
  int side = input_side;
  for (const int c : channels) {
    if (c <= 0) throw PreconditionError("conv channel counts must be positive");
    side /= pool;
    if (side <= 0) throw PreconditionError("too many pooling stages for the input side");
  }
}

void TrainConfig::validate() const {
  if (epochs <= 0) throw PreconditionError("epochs must be positive");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw PreconditionError("gamma must lie in (0, 1]");
  if (!(step_size > 0.0 && step_size <= 100.0))
    throw PreconditionError("step size must lie in (0, 100]");
  if (!(base_lr > 0.0)) throw PreconditionError("base learning rate must be positive");
  if (batch_size <= 0) throw PreconditionError("batch size must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw PreconditionError("momentum must lie in [0, 1)");
}

double lr_at(int epoch, const TrainConfig& cfg) {
  cfg.validate();
  if (epoch < 0 || epoch >= cfg.epochs)
    throw std::out_of_range("lr_at: epoch " + std::to_string(epoch) + " outside [0, " +
                            std::to_string(cfg.epochs) + ")");
  const double raw = cfg.step_size / 100.0 * cfg.epochs;
  const int step = std::max(1, static_cast<int>(std::ceil(raw - 1e-9)));
  return cfg.base_lr * std::pow(cfg.gamma, epoch / step);
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  const double mx = *std::max_element(p.begin(), p.end());
  double sum = 0.0;
  for (auto& v : p) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (auto& v : p) v /= sum;
  return p;
}

struct Network::Trace {
  std::vector<std::vector<double>> conv_in;    // input of each conv layer
  std::vector<std::vector<double>> conv_out;   // after ReLU
  std::vector<std::vector<double>> pooled;
  std::vector<std::vector<std::uint32_t>> argmax;
  std::vector<std::vector<double>> dense_in;   // input of each dense layer
  std::vector<double> logits;
};

Network::Network(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::size_t offset = 0;
  int side = cfg_.input_side;
  int in_c = cfg_.input_channels;
  const auto k2 = static_cast<std::size_t>(cfg_.kernel_size) * cfg_.kernel_size;
  for (const int out_c : cfg_.channels) {
    ConvLayer layer{in_c, out_c, side, side / cfg_.pool, offset, 0};
    offset += static_cast<std::size_t>(out_c) * in_c * k2;
    layer.b_off = offset;
    offset += static_cast<std::size_t>(out_c);
    convs_.push_back(layer);
    side /= cfg_.pool;
    in_c = out_c;
  }
  int features = convs_.empty() ? cfg_.input_channels * cfg_.input_side * cfg_.input_side
                                : cfg_.channels.back();
  auto add_dense = [&](int out, bool relu) {
    DenseLayer d{features, out, relu, offset, 0};
    offset += static_cast<std::size_t>(out) * features;
    d.b_off = offset;
    offset += static_cast<std::size_t>(out);
    dense_.push_back(d);
    features = out;
  };
  if (cfg_.hidden_width > 0) add_dense(cfg_.hidden_width, true);
  add_dense(cfg_.classes, false);
  params_.assign(offset, 0.0);
}

std::size_t Network::input_size() const noexcept {
  return static_cast<std::size_t>(cfg_.input_channels) * cfg_.input_side * cfg_.input_side;
}

void Network::initialize(std::uint64_t seed) {
  Rng rng(derive_seed({seed, 0x6e6574ULL}));
  std::fill(params_.begin(), params_.end(), 0.0);
  const int k2 = cfg_.kernel_size * cfg_.kernel_size;
  for (const auto& c : convs_) {
    const double sd = std::sqrt(2.0 / (c.in_c * k2));
    for (std::size_t i = c.w_off; i < c.b_off; ++i) params_[i] = sd * rng.normal();
  }
  for (const auto& d : dense_) {
    const double sd = std::sqrt((d.relu ? 2.0 : 1.0) / d.in);
    for (std::size_t i = d.w_off; i < d.b_off; ++i) params_[i] = sd * rng.normal();
  }
}

void Network::zero_output_layer() {
  const auto& out = dense_.back();
  std::fill(params_.begin() + static_cast<std::ptrdiff_t>(out.w_off),
            params_.begin() + static_cast<std::ptrdiff_t>(out.b_off + out.out), 0.0);
}

namespace {

// out[oc] += conv(in, w[oc]) over valid taps of a same-padded kernel.
void conv_forward(const double* in, int in_c, int side, const double* w, const double* bias,
                  int out_c, int k, double* out) {
  const int pad = k / 2;
  const std::size_t plane = static_cast<std::size_t>(side) * side;
  for (int oc = 0; oc < out_c; ++oc) {
    double* o = out + oc * plane;
    std::fill(o, o + plane, bias[oc]);
    for (int ic = 0; ic < in_c; ++ic) {
      const double* src = in + ic * plane;
      const double* wk = w + (static_cast<std::size_t>(oc) * in_c + ic) * k * k;
      for (int ky = 0; ky < k; ++ky) {
        const int dy = ky - pad;
        const int y0 = std::max(0, -dy);
        const int y1 = std::min(side, side - dy);
        for (int kx = 0; kx < k; ++kx) {
          const int dx = kx - pad;
          const int x0 = std::max(0, -dx);
          const int x1 = std::min(side, side - dx);
          const double wv = wk[ky * k + kx];
          for (int y = y0; y < y1; ++y) {
            const double* s = src + (y + dy) * side + dx;
            double* d = o + y * side;
            for (int x = x0; x < x1; ++x) d[x] += wv * s[x];
          }
        }
      }
    }
  }
}

void conv_backward(const double* in, int in_c, int side, const double* w, int out_c, int k,
                   const double* dout, double* dw, double* db, double* din) {
  const int pad = k / 2;
  const std::size_t plane = static_cast<std::size_t>(side) * side;
  for (int oc = 0; oc < out_c; ++oc) {
    const double* g = dout + oc * plane;
    double acc = 0.0;
    for (std::size_t i = 0; i < plane; ++i) acc += g[i];
    db[oc] += acc;
    for (int ic = 0; ic < in_c; ++ic) {
      const double* src = in + ic * plane;
      double* dsrc = din ? din + ic * plane : nullptr;
      const std::size_t wbase = (static_cast<std::size_t>(oc) * in_c + ic) * k * k;
      for (int ky = 0; ky < k; ++ky) {
        const int dy = ky - pad;
        const int y0 = std::max(0, -dy);
        const int y1 = std::min(side, side - dy);
        for (int kx = 0; kx < k; ++kx) {
          const int dx = kx - pad;
          const int x0 = std::max(0, -dx);
          const int x1 = std::min(side, side - dx);
          const double wv = w[wbase + ky * k + kx];
          double gw = 0.0;
          for (int y = y0; y < y1; ++y) {
            const double* s = src + (y + dy) * side + dx;
            const double* gr = g + y * side;
            for (int x = x0; x < x1; ++x) gw += gr[x] * s[x];
            if (dsrc) {
              double* ds = dsrc + (y + dy) * side + dx;
              for (int x = x0; x < x1; ++x) ds[x] += wv * gr[x];
            }
          }
          dw[wbase + ky * k + kx] += gw;
        }
      }
    }
  }
}

}  // namespace

void Network::forward(std::span<const double> input, Trace& t) const {
  if (input.size() != input_size())
    throw PreconditionError("network input has " + std::to_string(input.size()) +
                            " values, expected " + std::to_string(input_size()));
  const int k = cfg_.kernel_size;
  const int p = cfg_.pool;
  t.conv_in.resize(convs_.size());
  t.conv_out.resize(convs_.size());
  t.pooled.resize(convs_.size());
  t.argmax.resize(convs_.size());

  std::vector<double> current(input.begin(), input.end());
  for (std::size_t l = 0; l < convs_.size(); ++l) {
    const auto& c = convs_[l];
    const std::size_t plane = static_cast<std::size_t>(c.side) * c.side;
    t.conv_in[l] = std::move(current);
    auto& out = t.conv_out[l];
    out.assign(plane * c.out_c, 0.0);
    conv_forward(t.conv_in[l].data(), c.in_c, c.side, &params_[c.w_off], &params_[c.b_off],
                 c.out_c, k, out.data());
    for (auto& v : out) v = v > 0.0 ? v : 0.0;

    const int ps = c.pooled_side;
    auto& pooled = t.pooled[l];
    auto& arg = t.argmax[l];
    pooled.assign(static_cast<std::size_t>(ps) * ps * c.out_c, 0.0);
    arg.assign(pooled.size(), 0);
    for (int ch = 0; ch < c.out_c; ++ch) {
      const double* src = out.data() + ch * plane;
      for (int py = 0; py < ps; ++py) {
        for (int px = 0; px < ps; ++px) {
          std::uint32_t best = static_cast<std::uint32_t>((py * p) * c.side + px * p);
          double bv = src[best];
          for (int dy = 0; dy < p; ++dy) {
            for (int dx = 0; dx < p; ++dx) {
              const auto idx = static_cast<std::uint32_t>((py * p + dy) * c.side + px * p + dx);
              if (src[idx] > bv) {
                bv = src[idx];
                best = idx;
              }
            }
          }
          const std::size_t o = (static_cast<std::size_t>(ch) * ps + py) * ps + px;
          pooled[o] = bv;
          arg[o] = best;
        }
      }
    }
    current = pooled;
  }

  std::vector<double> features;
  if (convs_.empty()) {
    features = std::move(current);
  } else {
    const auto& last = convs_.back();
    const std::size_t plane = static_cast<std::size_t>(last.pooled_side) * last.pooled_side;
    features.assign(last.out_c, 0.0);
    for (int ch = 0; ch < last.out_c; ++ch) {
      double s = 0.0;
      for (std::size_t i = 0; i < plane; ++i) s += current[ch * plane + i];
      features[ch] = s / static_cast<double>(plane);
    }
  }

  t.dense_in.resize(dense_.size());
  for (std::size_t l = 0; l < dense_.size(); ++l) {
    const auto& d = dense_[l];
    t.dense_in[l] = std::move(features);
    const auto& a = t.dense_in[l];
    std::vector<double> z(d.out);
    for (int o = 0; o < d.out; ++o) {
      const double* wr = &params_[d.w_off + static_cast<std::size_t>(o) * d.in];
      double s = params_[d.b_off + o];
      for (int i = 0; i < d.in; ++i) s += wr[i] * a[i];
      z[o] = d.relu ? std::max(s, 0.0) : s;
    }
    features = std::move(z);
  }
  t.logits = std::move(features);
}

std::vector<double> Network::logits(std::span<const double> input) const {
  Trace t;
  forward(input, t);
  return t.logits;
}

namespace {

double cross_entropy(std::span<const double> logits, int cls) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (const double v : logits) sum += std::exp(v - mx);
  return std::log(sum) + mx - logits[cls];
}

}  // namespace

double Network::loss(std::span<const double> input, int class_index) const {
  const auto z = logits(input);
  return cross_entropy(z, class_index);
}

double Network::loss_and_gradient(std::span<const double> input, int class_index,
                                  std::span<double> grad) const {
  if (grad.size() != params_.size()) throw PreconditionError("gradient buffer size mismatch");
  if (class_index < 0 || class_index >= cfg_.classes)
    throw PreconditionError("class index out of range");
  Trace t;
  forward(input, t);
  const double loss_value = cross_entropy(t.logits, class_index);

  std::vector<double> delta = softmax(t.logits);
  delta[class_index] -= 1.0;

  for (std::size_t l = dense_.size(); l-- > 0;) {
    const auto& d = dense_[l];
    const auto& a = t.dense_in[l];
    std::vector<double> prev(d.in, 0.0);
    for (int o = 0; o < d.out; ++o) {
      const double g = delta[o];
      grad[d.b_off + o] += g;
      if (g == 0.0) continue;
      const std::size_t row = d.w_off + static_cast<std::size_t>(o) * d.in;
      for (int i = 0; i < d.in; ++i) {
        grad[row + i] += g * a[i];
        prev[i] += g * params_[row + i];
      }
    }
    // The input of dense layer l is the (ReLU) output of layer l - 1.
    if (l > 0 && dense_[l - 1].relu)
      for (int i = 0; i < d.in; ++i)
        if (a[i] <= 0.0) prev[i] = 0.0;
    delta = std::move(prev);
  }

  if (convs_.empty()) return loss_value;

  // Global average pool backward.
  const auto& last = convs_.back();
  const std::size_t last_plane = static_cast<std::size_t>(last.pooled_side) * last.pooled_side;
  std::vector<double> dpooled(last_plane * last.out_c);
  for (int ch = 0; ch < last.out_c; ++ch)
    std::fill_n(dpooled.begin() + static_cast<std::ptrdiff_t>(ch * last_plane), last_plane,
                delta[ch] / static_cast<double>(last_plane));

  for (std::size_t l = convs_.size(); l-- > 0;) {
    const auto& c = convs_[l];
    const std::size_t plane = static_cast<std::size_t>(c.side) * c.side;
    const std::size_t pplane = static_cast<std::size_t>(c.pooled_side) * c.pooled_side;
    std::vector<double> dout(plane * c.out_c, 0.0);
    for (int ch = 0; ch < c.out_c; ++ch)
      for (std::size_t i = 0; i < pplane; ++i) {
        const std::size_t o = ch * pplane + i;
        dout[ch * plane + t.argmax[l][o]] += dpooled[o];
      }
    const auto& act = t.conv_out[l];
    for (std::size_t i = 0; i < dout.size(); ++i)
      if (act[i] <= 0.0) dout[i] = 0.0;

    std::vector<double> din;
    if (l > 0) din.assign(plane * c.in_c, 0.0);
    conv_backward(t.conv_in[l].data(), c.in_c, c.side, &params_[c.w_off], c.out_c,
                  cfg_.kernel_size, dout.data(), &grad[c.w_off], &grad[c.b_off],
                  l > 0 ? din.data() : nullptr);
    dpooled = std::move(din);
  }
  return loss_value;
}

std::vector<double> to_input(const RgbImage& image, const std::array<double, 3>& channel_mean) {
  const std::size_t plane = static_cast<std::size_t>(image.width()) * image.height();
  std::vector<double> out(plane * 3);
  const auto bytes = image.bytes();
  for (std::size_t i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c) out[c * plane + i] = bytes[i * 3 + c] / 255.0 - channel_mean[c];
  return out;
}

std::array<double, 3> channel_means(std::span<const LabeledImage> images) {
  std::array<double, 3> sum{};
  double count = 0.0;
  for (const auto& li : images) {
    const auto bytes = li.image.bytes();
    for (std::size_t i = 0; i < bytes.size(); i += 3)
      for (int c = 0; c < 3; ++c) sum[c] += bytes[i + c];
    count += static_cast<double>(bytes.size() / 3);
  }
  if (count == 0.0) return {};
  for (auto& s : sum) s /= count * 255.0;
  return sum;
}

namespace {

void check_image(const RgbImage& img, int side) {
  if (img.width() != side || img.height() != side)
    throw PreconditionError("image is " + std::to_string(img.width()) + "x" +
                            std::to_string(img.height()) + ", model expects " +
                            std::to_string(side) + "x" + std::to_string(side));
}

}  // namespace

TrainedModel train(std::span<const LabeledImage> train_set, std::span<const LabeledImage> val,
                   const ModelConfig& model_cfg, const TrainConfig& cfg) {
  model_cfg.validate();
  cfg.validate();
  if (train_set.empty()) throw PreconditionError("train: empty training split");
  std::set<int> train_classes;
  for (const auto& li : train_set) {
    if (li.tree_class < 1 || li.tree_class > model_cfg.classes)
      throw PreconditionError("train: class id " + std::to_string(li.tree_class) + " out of range");
    check_image(li.image, model_cfg.input_side);
    train_classes.insert(li.tree_class);
  }
  for (const auto& li : val) {
    check_image(li.image, model_cfg.input_side);
    if (!train_classes.count(li.tree_class))
      throw PreconditionError("train: class " + std::to_string(li.tree_class) +
                              " is missing from the train split");
  }

  TrainedModel model(model_cfg);
  model.network.initialize(cfg.seed);
  model.channel_mean = channel_means(train_set);
  model.classes.assign(train_classes.begin(), train_classes.end());

  auto params = model.network.parameters();
  std::vector<double> grad(params.size());
  std::vector<double> velocity(params.size(), 0.0);
  std::vector<std::size_t> order(train_set.size());

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(epoch, cfg);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed({cfg.seed, static_cast<std::uint64_t>(epoch), 0x7368ULL}));
    rng.shuffle(order.begin(), order.end());

    double epoch_loss = 0.0;
    for (std::size_t start = 0, batch = 0; start < order.size(); start += cfg.batch_size, ++batch) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::fill(grad.begin(), grad.end(), 0.0);
      double batch_loss = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        const auto& li = train_set[order[k]];
        const auto input = to_input(li.image, model.channel_mean);
        batch_loss += model.network.loss_and_gradient(input, li.tree_class - 1, grad);
      }
      if (!std::isfinite(batch_loss))
        throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch) +
                                 ", batch " + std::to_string(batch));
      const double inv = 1.0 / static_cast<double>(end - start);
      for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grad[i] * inv + cfg.weight_decay * params[i];
        velocity[i] = cfg.momentum * velocity[i] - lr * g;
        params[i] += velocity[i];
      }
      epoch_loss += batch_loss;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = epoch_loss / static_cast<double>(order.size());
    if (val.empty()) {
      rec.val_loss = std::numeric_limits<double>::quiet_NaN();
      rec.val_accuracy = std::numeric_limits<double>::quiet_NaN();
    } else {
      double vl = 0.0;
      std::size_t correct = 0;
      for (const auto& li : val) {
        const auto z = model.network.logits(to_input(li.image, model.channel_mean));
        vl += cross_entropy(z, li.tree_class - 1);
        const auto arg = std::max_element(z.begin(), z.end()) - z.begin();
        if (arg == li.tree_class - 1) ++correct;
      }
      rec.val_loss = vl / static_cast<double>(val.size());
      rec.val_accuracy = static_cast<double>(correct) / static_cast<double>(val.size());
    }
    model.history.push_back(rec);
  }
  return model;
}

std::vector<double> predict(const TrainedModel& model, const RgbImage& image) {
  check_image(image, model.network.config().input_side);
  return softmax(model.network.logits(to_input(image, model.channel_mean)));
}

int predict_class(const TrainedModel& model, const RgbImage& image) {
  const auto p = predict(model, image);
  return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin()) + 1;
}

double gradient_check(const ModelConfig& cfg, std::span<const GradientSample> batch,
                      double epsilon, std::uint64_t seed) {
  if (!(epsilon >= 1e-5 && epsilon <= 1e-2))
    throw PreconditionError("gradient_check: epsilon must lie in [1e-5, 1e-2]");
  if (batch.empty()) throw PreconditionError("gradient_check: empty batch");
  Network net(cfg);
  net.initialize(seed);
  auto params = net.parameters();

  const double inv = 1.0 / static_cast<double>(batch.size());
  auto mean_loss = [&]() {
    double s = 0.0;
    for (const auto& b : batch) s += net.loss(b.input, b.class_index);
    return s * inv;
  };

  std::vector<double> analytic(params.size(), 0.0);
  for (const auto& b : batch) net.loss_and_gradient(b.input, b.class_index, analytic);
  for (auto& g : analytic) g *= inv;

  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + epsilon;
    const double up = mean_loss();
    params[i] = saved - epsilon;
    const double down = mean_loss();
    params[i] = saved;
    const double numeric = (up - down) / (2.0 * epsilon);
    if (!std::isfinite(numeric) || !std::isfinite(analytic[i]))
      return std::numeric_limits<double>::infinity();
    const double denom = std::max(std::abs(analytic[i]) + std::abs(numeric), 1e-10);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

}  // namespace crownpipe::classifier
