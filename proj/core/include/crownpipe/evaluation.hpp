#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace crownpipe::evaluation {

// counts[i][j]: samples of true class classes[i] predicted as classes[j].
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::vector<int> classes);
  ConfusionMatrix(std::vector<int> classes, std::vector<std::vector<std::int64_t>> counts);

  const std::vector<int>& classes() const noexcept { return classes_; }
  std::size_t size() const noexcept { return classes_.size(); }
  std::int64_t at(std::size_t truth, std::size_t predicted) const {
    return counts_.at(truth).at(predicted);
  }
  const std::vector<std::vector<std::int64_t>>& counts() const noexcept { return counts_; }
  std::size_t index_of(int cls) const;

  void add(int truth, int predicted, std::int64_t n = 1);
  std::int64_t row_sum(std::size_t i) const;
  std::int64_t total() const;
  std::int64_t trace() const;

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::vector<int> classes_;
  std::vector<std::vector<std::int64_t>> counts_;
};

ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> predicted,
                          const std::vector<int>& classes);

// Diagonal over row sum; nullopt for an empty row.
std::vector<std::optional<double>> per_class_accuracy(const ConfusionMatrix& m);
double overall_accuracy(const ConfusionMatrix& m);

struct TypeMapping {
  std::map<int, int> class_to_type;  // scored classes only
  std::map<int, std::string> type_names;
  static TypeMapping tree_types();
};

// Type id used for the residual column collecting predictions of unscored
// classes. Its row is always empty.
inline constexpr int kExcludedType = 0;

// Rows restricted to mapped classes, columns collapsed by the mapping;
// predictions of unmapped classes fall into the kExcludedType column.
ConfusionMatrix aggregate_types(const ConfusionMatrix& m, const TypeMapping& mapping);

// Percent with two decimals, trailing zero dropped ("95.83%", "68.0%").
std::string format_class_percent(double fraction);
// Percent with one decimal ("89.0%").
std::string format_overall_percent(double fraction);

struct Report {
  ConfusionMatrix species;
  std::optional<ConfusionMatrix> types;
};

Report make_report(const ConfusionMatrix& species, const TypeMapping& mapping);
std::string report_json(const Report& report);
// Confusion table with per-class accuracy column and overall line.
std::string report_text(const Report& report);

}  // namespace crownpipe::evaluation
