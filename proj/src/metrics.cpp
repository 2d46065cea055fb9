#include "camadapt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <tuple>

#include "camadapt/error.hpp"

namespace camadapt {
namespace {

void check_binary(const std::vector<int>& labels, std::size_t n_scores, std::size_t& pos,
                  std::size_t& neg) {
  if (labels.size() != n_scores) fail(ErrorKind::kInvalidArgument, "auc: labels and scores differ in length");
  pos = neg = 0;
  for (int y : labels) {
    if (y == 1) ++pos;
    else if (y == 0) ++neg;
    else fail(ErrorKind::kInvalidArgument, "auc: labels must be 0 or 1");
  }
  if (pos == 0 || neg == 0) fail(ErrorKind::kDegenerateInput, "auc needs at least one positive and one negative");
}

}  // namespace

KappaResult quadratic_weighted_kappa_checked(const std::vector<int>& labels,
                                             const std::vector<int>& preds, int num_classes) {
  if (labels.size() != preds.size()) fail(ErrorKind::kInvalidArgument, "qwk: length mismatch");
  if (labels.empty()) fail(ErrorKind::kInvalidArgument, "qwk: empty input");
  if (num_classes < 2) fail(ErrorKind::kInvalidArgument, "qwk: num_classes must be >= 2");
  const int k = num_classes;
  std::vector<double> observed(static_cast<std::size_t>(k) * k, 0.0), row(k, 0.0), col(k, 0.0);
  const double inv = 1.0 / static_cast<double>(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int a = labels[i], b = preds[i];
    if (a < 0 || a >= k || b < 0 || b >= k) fail(ErrorKind::kInvalidArgument, "qwk: value out of range");
    observed[static_cast<std::size_t>(a) * k + b] += inv;
    row[a] += inv;
    col[b] += inv;
  }
  double num = 0.0, den = 0.0;
  const double norm = static_cast<double>(k - 1) * (k - 1);
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) {
      const double w = static_cast<double>(i - j) * (i - j) / norm;
      num += w * observed[static_cast<std::size_t>(i) * k + j];
      den += w * row[i] * col[j];
    }
  }
  if (den == 0.0) return {1.0, true};
  return {1.0 - num / den, false};
}

double quadratic_weighted_kappa(const std::vector<int>& labels, const std::vector<int>& preds,
                                int num_classes) {
  const KappaResult r = quadratic_weighted_kappa_checked(labels, preds, num_classes);
  if (r.degenerate) std::cerr << "warning: qwk denominator is zero; defined as 1.0\n";
  return r.value;
}

double auc_pairwise(const std::vector<int>& labels, const std::vector<double>& scores) {
  std::size_t pos = 0, neg = 0;
  check_binary(labels, scores.size(), pos, neg);
  double wins = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < labels.size(); ++j) {
      if (labels[j] != 0) continue;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / (static_cast<double>(pos) * static_cast<double>(neg));
}

double auc_rank_sum(const std::vector<int>& labels, const std::vector<double>& scores) {
  std::size_t pos = 0, neg = 0;
  check_binary(labels, scores.size(), pos, neg);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Midranks for tied groups.
  double pos_rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) {
      if (labels[order[t]] == 1) pos_rank_sum += midrank;
    }
    i = j + 1;
  }
  const double p = static_cast<double>(pos), q = static_cast<double>(neg);
  return (pos_rank_sum - p * (p + 1.0) / 2.0) / (p * q);
}

double auc(const std::vector<int>& labels, const std::vector<double>& scores) {
  return labels.size() <= kExactAucLimit ? auc_pairwise(labels, scores) : auc_rank_sum(labels, scores);
}

std::string to_string(MetricName metric) { return metric == MetricName::kQwk ? "qwk" : "auc"; }

MetricName parse_metric_name(const std::string& token) {
  if (token == "qwk") return MetricName::kQwk;
  if (token == "auc") return MetricName::kAuc;
  fail(ErrorKind::kConfig, "unknown metric '" + token + "'");
}

EvalResult evaluate_cell(const DomainId& brand, Task task, const CellPredictions& cell, bool adapted) {
  if (cell.labels.empty()) fail(ErrorKind::kDegenerateInput, "empty test split for brand " + brand);
  EvalResult r;
  r.brand = brand;
  r.metric_name = metric_for(task);
  r.n_samples = cell.labels.size();
  r.adapted = adapted;
  r.value = r.metric_name == MetricName::kAuc
                ? auc(cell.labels, cell.scores)
                : quadratic_weighted_kappa(cell.labels, cell.preds, num_classes(task));
  return r;
}

void sort_results(std::vector<EvalResult>& results) {
  std::sort(results.begin(), results.end(), [](const EvalResult& a, const EvalResult& b) {
    return std::tie(a.brand, a.adapted) < std::tie(b.brand, b.adapted);
  });
}

ResultTable make_table(const std::vector<EvalResult>& results) {
  ResultTable table;
  if (!results.empty()) table.metric = results.front().metric_name;
  std::map<DomainId, ResultTable::Row> rows;
  for (const auto& r : results) {
    auto& row = rows[r.brand];
    row.brand = r.brand;
    if (r.adapted) {
      row.has_adapted = true;
      row.adapted = r.value;
    } else {
      row.unadapted = r.value;
      row.n_samples = r.n_samples;
    }
  }
  for (auto& [_, row] : rows) table.rows.push_back(row);
  return table;
}

void write_results_csv(const std::filesystem::path& path, const std::vector<EvalResult>& results) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  std::vector<EvalResult> sorted = results;
  sort_results(sorted);
  out.precision(10);
  out << "brand,metric,value,n_samples,adapted\n";
  for (const auto& r : sorted) {
    out << r.brand << ',' << to_string(r.metric_name) << ',' << r.value << ',' << r.n_samples << ','
        << (r.adapted ? 1 : 0) << '\n';
  }
}

}  // namespace camadapt
