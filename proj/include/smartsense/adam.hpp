#pragma once

#include <vector>

#include "smartsense/common.hpp"

namespace smartsense {

// First/second moment accumulators, one slot per parameter tensor, in the
// same order the trainer enumerates parameters.
struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  long step = 0;

  static AdamState zeros_like(const std::vector<Matrix*>& params);
};

struct AdamOptions {
  double lr = 0.001;
  double l2 = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Classic Adam with bias correction. l2 is added to each gradient as
// l2 * theta before the moment updates.
void adam_step(const std::vector<Matrix*>& params,
               const std::vector<Matrix>& grads, AdamState& state,
               const AdamOptions& options);

}  // namespace smartsense
