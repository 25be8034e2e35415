#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "crownpipe/classifier.hpp"
#include "crownpipe/error.hpp"

namespace crownpipe::classifier {

namespace {

constexpr char kMagic[4] = {'C', 'R', 'W', 'N'};
constexpr std::uint32_t kFormatVersion = 1;

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}
  void u32(std::uint32_t v) { raw(to_little(v)); }
  void u64(std::uint64_t v) { raw(to_little(v)); }
  void f64(double v) { raw(to_little(std::bit_cast<std::uint64_t>(v))); }

 private:
  template <typename T>
  void raw(T v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  std::ostream& out_;
};

class Reader {
 public:
  Reader(std::istream& in, std::string where) : in_(in), where_(std::move(where)) {}
  std::uint32_t u32() { return to_little(raw<std::uint32_t>()); }
  std::uint64_t u64() { return to_little(raw<std::uint64_t>()); }
  double f64() { return std::bit_cast<double>(to_little(raw<std::uint64_t>())); }

 private:
  template <typename T>
  T raw() {
    T v{};
    in_.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in_) throw IoError(where_ + ": truncated model file");
    return v;
  }
  std::istream& in_;
  std::string where_;
};

}  // namespace

void save_model(const TrainedModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kMagic, 4);
  Writer w(out);
  w.u32(kFormatVersion);
  const auto& cfg = model.network.config();
  w.u32(static_cast<std::uint32_t>(cfg.input_side));
  w.u32(static_cast<std::uint32_t>(cfg.input_channels));
  w.u32(static_cast<std::uint32_t>(cfg.channels.size()));
  for (const int c : cfg.channels) w.u32(static_cast<std::uint32_t>(c));
  w.u32(static_cast<std::uint32_t>(cfg.kernel_size));
  w.u32(static_cast<std::uint32_t>(cfg.pool));
  w.u32(static_cast<std::uint32_t>(cfg.hidden_width));
  w.u32(static_cast<std::uint32_t>(cfg.classes));
  w.u32(static_cast<std::uint32_t>(model.classes.size()));
  for (const int c : model.classes) w.u32(static_cast<std::uint32_t>(c));
  const auto params = model.network.parameters();
  w.u64(3 + params.size());
  for (const double m : model.channel_mean) w.f64(m);
  for (const double p : params) w.f64(p);
  if (!out) throw IoError("short write to " + path.string());
}

TrainedModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) throw IoError(path.string() + ": not a CRWN model");
  Reader r(in, path.string());
  const auto version = r.u32();
  if (version != kFormatVersion)
    throw IoError(path.string() + ": unsupported model format version " + std::to_string(version));

  ModelConfig cfg;
  cfg.input_side = static_cast<int>(r.u32());
  cfg.input_channels = static_cast<int>(r.u32());
  const auto blocks = r.u32();
  if (blocks > 64) throw IoError(path.string() + ": implausible block count");
  cfg.channels.clear();
  for (std::uint32_t i = 0; i < blocks; ++i) cfg.channels.push_back(static_cast<int>(r.u32()));
  cfg.kernel_size = static_cast<int>(r.u32());
  cfg.pool = static_cast<int>(r.u32());
  cfg.hidden_width = static_cast<int>(r.u32());
  cfg.classes = static_cast<int>(r.u32());

  TrainedModel model(cfg);
  const auto n_classes = r.u32();
  if (n_classes > 1024) throw IoError(path.string() + ": implausible class count");
  for (std::uint32_t i = 0; i < n_classes; ++i) model.classes.push_back(static_cast<int>(r.u32()));
  auto params = model.network.parameters();
  const auto count = r.u64();
  if (count != 3 + params.size())
    throw IoError(path.string() + ": parameter count does not match the model config");
  for (auto& m : model.channel_mean) m = r.f64();
  for (auto& p : params) {
    p = r.f64();
    if (!std::isfinite(p)) throw IoError(path.string() + ": non-finite weight");
  }
  return model;
}

void write_history_csv(const std::vector<EpochRecord>& history, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "epoch,train_loss,val_loss,val_accuracy,lr\n";
  out.precision(17);
  for (const auto& h : history)
    out << h.epoch << ',' << h.train_loss << ',' << h.val_loss << ',' << h.val_accuracy << ','
        << h.lr << '\n';
}

}  // namespace crownpipe::classifier
