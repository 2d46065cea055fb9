#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "camadapt/manifest.hpp"

namespace camadapt {

struct KappaResult {
  double value = 0.0;
  bool degenerate = false;  // zero expected disagreement; value defined as 1.0
};

// 1 - sum(w O) / sum(w E) with w_ij = (i - j)^2 / (K - 1)^2.
KappaResult quadratic_weighted_kappa_checked(const std::vector<int>& labels,
                                             const std::vector<int>& preds, int num_classes);
double quadratic_weighted_kappa(const std::vector<int>& labels, const std::vector<int>& preds,
                                int num_classes);

inline constexpr std::size_t kExactAucLimit = 10000;

// P(score of random positive > score of random negative), ties count 0.5.
double auc(const std::vector<int>& labels, const std::vector<double>& scores);
double auc_pairwise(const std::vector<int>& labels, const std::vector<double>& scores);
double auc_rank_sum(const std::vector<int>& labels, const std::vector<double>& scores);

enum class MetricName { kQwk, kAuc };
std::string to_string(MetricName metric);
MetricName parse_metric_name(const std::string& token);
inline MetricName metric_for(Task task) { return task == Task::kBinary ? MetricName::kAuc : MetricName::kQwk; }

struct EvalResult {
  DomainId brand;
  MetricName metric_name = MetricName::kAuc;
  double value = 0.0;
  std::size_t n_samples = 0;
  bool adapted = false;
  bool operator==(const EvalResult&) const = default;
};

// Labels, hard predictions and (binary) positive-class scores for one cell.
struct CellPredictions {
  std::vector<int> labels;
  std::vector<int> preds;
  std::vector<double> scores;
};

EvalResult evaluate_cell(const DomainId& brand, Task task, const CellPredictions& cell, bool adapted);

// Orders results by (brand, adapted).
void sort_results(std::vector<EvalResult>& results);

// Table layout: one row per brand with no-adaptation and adapted columns.
struct ResultTable {
  MetricName metric = MetricName::kAuc;
  struct Row {
    DomainId brand;
    double unadapted = 0.0;
    bool has_adapted = false;
    double adapted = 0.0;
    std::size_t n_samples = 0;
  };
  std::vector<Row> rows;  // sorted by brand
};

ResultTable make_table(const std::vector<EvalResult>& results);
void write_results_csv(const std::filesystem::path& path, const std::vector<EvalResult>& results);

}  // namespace camadapt
