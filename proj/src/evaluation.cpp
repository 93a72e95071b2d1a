#include "smartsense/evaluation.hpp"

#include <sstream>

#include <nlohmann/json.hpp>

namespace smartsense {

std::string EvalReport::csv_row() const {
  std::ostringstream out;
  out.precision(6);
  out << std::fixed << model << ',' << map1 << ',' << map3 << ',' << map5
      << ',' << hr1 << ',' << hr3 << ',' << hr5;
  return out.str();
}

std::string EvalReport::to_json() const {
  return nlohmann::json{{"model", model},
                        {"instances", instances},
                        {"map", {{"1", map1}, {"3", map3}, {"5", map5}}},
                        {"hr", {{"1", hr1}, {"3", hr3}, {"5", hr5}}}}
      .dump(2);
}

int rank_of_target(const Vector& scores, int target) {
  if (target < 0 || target >= scores.size()) {
    throw UsageError("rank_of_target: target out of range");
  }
  const double pivot = scores(target);
  int rank = 1;
  for (Index i = 0; i < scores.size(); ++i) {
    if (scores(i) > pivot || (scores(i) == pivot && i < target)) ++rank;
  }
  return rank;
}

int hr_at_k(int rank, int k) {
  if (rank < 1) throw UsageError("hr_at_k: rank must be 1-based");
  return rank <= k ? 1 : 0;
}

double map_at_k(int rank, int k) {
  if (rank < 1) throw UsageError("map_at_k: rank must be 1-based");
  return rank <= k ? 1.0 / rank : 0.0;
}

EvalReport evaluate_model(const BatchScorer& scorer,
                          std::span<const Instance> test_set,
                          const std::string& model_name) {
  if (test_set.empty()) {
    throw UsageError("evaluate_model: test set must be non-empty");
  }
  EvalReport report;
  report.model = model_name;
  report.instances = test_set.size();
  constexpr std::size_t kChunk = 512;
  for (std::size_t at = 0; at < test_set.size(); at += kChunk) {
    const std::size_t n = std::min(kChunk, test_set.size() - at);
    const Matrix scores = scorer(test_set.subspan(at, n));
    for (std::size_t i = 0; i < n; ++i) {
      const Vector row = scores.row(static_cast<Index>(i)).transpose();
      const int rank = rank_of_target(row, test_set[at + i].target_control);
      report.map1 += map_at_k(rank, 1);
      report.map3 += map_at_k(rank, 3);
      report.map5 += map_at_k(rank, 5);
      report.hr1 += hr_at_k(rank, 1);
      report.hr3 += hr_at_k(rank, 3);
      report.hr5 += hr_at_k(rank, 5);
    }
  }
  const double n = static_cast<double>(report.instances);
  report.map1 /= n;
  report.map3 /= n;
  report.map5 /= n;
  report.hr1 /= n;
  report.hr3 /= n;
  report.hr5 /= n;
  return report;
}

BatchScorer pop_baseline(std::span<const Instance> train_set, int n_ctrl) {
  if (train_set.empty()) {
    throw UsageError("pop_baseline: training set must be non-empty");
  }
  Vector counts = Vector::Zero(n_ctrl);
  for (const Instance& instance : train_set) {
    if (instance.target_control < 0 || instance.target_control >= n_ctrl) {
      throw UsageError("pop_baseline: target control out of range");
    }
    counts(instance.target_control) += 1.0;
  }
  return [counts](std::span<const Instance> batch) {
    Matrix scores(static_cast<Index>(batch.size()), counts.size());
    scores.rowwise() = counts.transpose();
    return scores;
  };
}

}  // namespace smartsense
