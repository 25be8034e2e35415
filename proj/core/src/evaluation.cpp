#include "crownpipe/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "crownpipe/error.hpp"

namespace crownpipe::evaluation {

ConfusionMatrix::ConfusionMatrix(std::vector<int> classes)
    : classes_(std::move(classes)),
      counts_(classes_.size(), std::vector<std::int64_t>(classes_.size(), 0)) {
  auto sorted = classes_;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw PreconditionError("confusion matrix classes must be distinct");
}

ConfusionMatrix::ConfusionMatrix(std::vector<int> classes,
                                 std::vector<std::vector<std::int64_t>> counts)
    : ConfusionMatrix(std::move(classes)) {
  if (counts.size() != classes_.size())
    throw PreconditionError("confusion matrix must be square over its classes");
  for (const auto& row : counts) {
    if (row.size() != classes_.size())
      throw PreconditionError("confusion matrix must be square over its classes");
    for (const auto v : row)
      if (v < 0) throw PreconditionError("confusion counts must be nonnegative");
  }
  counts_ = std::move(counts);
}

std::size_t ConfusionMatrix::index_of(int cls) const {
  auto it = std::find(classes_.begin(), classes_.end(), cls);
  if (it == classes_.end()) throw PreconditionError("unknown label " + std::to_string(cls));
  return static_cast<std::size_t>(it - classes_.begin());
}

void ConfusionMatrix::add(int truth, int predicted, std::int64_t n) {
  counts_[index_of(truth)][index_of(predicted)] += n;
}

std::int64_t ConfusionMatrix::row_sum(std::size_t i) const {
  std::int64_t s = 0;
  for (const auto v : counts_.at(i)) s += v;
  return s;
}

std::int64_t ConfusionMatrix::total() const {
  std::int64_t s = 0;
  for (std::size_t i = 0; i < counts_.size(); ++i) s += row_sum(i);
  return s;
}

std::int64_t ConfusionMatrix::trace() const {
  std::int64_t s = 0;
  for (std::size_t i = 0; i < counts_.size(); ++i) s += counts_[i][i];
  return s;
}

ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> predicted,
                          const std::vector<int>& classes) {
  if (truth.size() != predicted.size())
    throw PreconditionError("confusion: truth and prediction lists differ in length");
  ConfusionMatrix m(classes);
  for (std::size_t i = 0; i < truth.size(); ++i) m.add(truth[i], predicted[i]);
  return m;
}

std::vector<std::optional<double>> per_class_accuracy(const ConfusionMatrix& m) {
  std::vector<std::optional<double>> out;
  out.reserve(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    const auto row = m.row_sum(i);
    if (row == 0) {
      out.push_back(std::nullopt);
    } else {
      out.push_back(static_cast<double>(m.at(i, i)) / static_cast<double>(row));
    }
  }
  return out;
}

double overall_accuracy(const ConfusionMatrix& m) {
  const auto total = m.total();
  if (total == 0) throw PreconditionError("overall_accuracy: empty confusion matrix");
  return static_cast<double>(m.trace()) / static_cast<double>(total);
}

TypeMapping TypeMapping::tree_types() {
  TypeMapping t;
  t.class_to_type = {{1, 1}, {2, 2}, {3, 3}, {4, 4}, {5, 4}, {6, 4}};
  t.type_names = {{1, "deciduous broad-leaved"},
                  {2, "deciduous coniferous"},
                  {3, "evergreen broad-leaved"},
                  {4, "evergreen coniferous"},
                  {kExcludedType, "excluded"}};
  return t;
}

ConfusionMatrix aggregate_types(const ConfusionMatrix& m, const TypeMapping& mapping) {
  std::vector<int> types;
  for (const auto& [cls, type] : mapping.class_to_type) {
    if (type == kExcludedType) throw PreconditionError("type id 0 is reserved");
    if (std::find(types.begin(), types.end(), type) == types.end()) types.push_back(type);
  }
  std::sort(types.begin(), types.end());
  types.push_back(kExcludedType);
  ConfusionMatrix out(types);

  for (std::size_t i = 0; i < m.size(); ++i) {
    auto row_type = mapping.class_to_type.find(m.classes()[i]);
    if (row_type == mapping.class_to_type.end()) continue;
    for (std::size_t j = 0; j < m.size(); ++j) {
      const auto n = m.at(i, j);
      if (n == 0) continue;
      auto col_type = mapping.class_to_type.find(m.classes()[j]);
      const int col = col_type == mapping.class_to_type.end() ? kExcludedType : col_type->second;
      out.add(row_type->second, col, n);
    }
  }
  return out;
}

std::string format_class_percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", fraction * 100.0);
  std::string s(buf);
  if (s.size() > 1 && s.back() == '0') s.pop_back();
  return s + "%";
}

std::string format_overall_percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", fraction * 100.0);
  return std::string(buf) + "%";
}

Report make_report(const ConfusionMatrix& species, const TypeMapping& mapping) {
  Report r{species, std::nullopt};
  bool mapped = false;
  for (const int c : species.classes()) mapped = mapped || mapping.class_to_type.count(c);
  if (mapped) r.types = aggregate_types(species, mapping);
  return r;
}

namespace {

nlohmann::json matrix_json(const ConfusionMatrix& m) {
  nlohmann::json j;
  j["classes"] = m.classes();
  j["counts"] = m.counts();
  j["total"] = m.total();
  j["correct"] = m.trace();
  auto per = per_class_accuracy(m);
  nlohmann::json pc = nlohmann::json::array();
  for (const auto& p : per) pc.push_back(p ? nlohmann::json(*p) : nlohmann::json(nullptr));
  j["per_class_accuracy"] = pc;
  j["overall_accuracy"] = m.total() ? nlohmann::json(overall_accuracy(m)) : nlohmann::json(nullptr);
  return j;
}

void matrix_text(std::ostream& os, const ConfusionMatrix& m, bool skip_empty_rows) {
  const auto per = per_class_accuracy(m);
  os << std::setw(8) << ' ';
  for (const int c : m.classes()) os << std::setw(6) << c;
  os << "  Per-class accuracy\n";
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (skip_empty_rows && m.row_sum(i) == 0) continue;
    os << std::setw(8) << m.classes()[i];
    for (std::size_t j = 0; j < m.size(); ++j) os << std::setw(6) << m.at(i, j);
    os << "  " << (per[i] ? format_class_percent(*per[i]) : std::string("n/a")) << '\n';
  }
  os << std::setw(8) << "overall" << "  "
     << (m.total() ? format_overall_percent(overall_accuracy(m)) : std::string("n/a")) << '\n';
}

}  // namespace

std::string report_json(const Report& report) {
  nlohmann::json j;
  j["species"] = matrix_json(report.species);
  if (report.types) j["types"] = matrix_json(*report.types);
  return j.dump(2);
}

std::string report_text(const Report& report) {
  std::ostringstream os;
  os << "Confusion matrix (rows: ground truth, columns: prediction)\n";
  matrix_text(os, report.species, false);
  if (report.types) {
    os << "\nTree-type level (column 0 collects predictions of unscored classes)\n";
    matrix_text(os, *report.types, true);
  }
  return os.str();
}

}  // namespace crownpipe::evaluation
