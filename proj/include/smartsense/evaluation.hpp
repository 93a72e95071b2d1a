#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "smartsense/data.hpp"

namespace smartsense {

struct EvalReport {
  double map1 = 0.0, map3 = 0.0, map5 = 0.0;
  double hr1 = 0.0, hr3 = 0.0, hr5 = 0.0;
  std::size_t instances = 0;
  std::string model;

  std::string csv_header() const { return "model,map1,map3,map5,hr1,hr3,hr5"; }
  std::string csv_row() const;
  std::string to_json() const;
};

// Scores a batch of instances; returns one row of control scores per
// instance. Higher is better; only the induced ranking matters.
using BatchScorer = std::function<Matrix(std::span<const Instance>)>;

// 1-based rank of the target: ties are broken by ascending index, so a tied
// item with a smaller index outranks the target.
int rank_of_target(const Vector& scores, int target);

int hr_at_k(int rank, int k);

// Average precision with a single relevant item: 1/rank within the cutoff.
double map_at_k(int rank, int k);

EvalReport evaluate_model(const BatchScorer& scorer,
                          std::span<const Instance> test_set,
                          const std::string& model_name = "model");

// Constant scoring by training-frequency counts of each control.
BatchScorer pop_baseline(std::span<const Instance> train_set, int n_ctrl);

}  // namespace smartsense
