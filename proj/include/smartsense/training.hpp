#pragma once

#include <optional>
#include <string>
#include <vector>

#include "smartsense/adam.hpp"
#include "smartsense/model.hpp"

namespace smartsense {

struct TrainSettings {
  int max_epochs = 100;
  int patience = 5;  // epochs without val mAP@1 improvement before stopping
  std::uint64_t seed = 0;
  // Routines sampled per optimization step; 0 means min(batch_size, #routines).
  int routine_batch = 0;
  std::string checkpoint_dir;
};

struct EpochRecord {
  double train_loss = 0.0;
  double val_map1 = 0.0;
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;  // 0-based index into epochs
  double best_val_map1 = 0.0;
  std::string checkpoint_path;
};

// m distinct device ids drawn uniformly from devices outside the routine.
std::vector<int> sample_negatives(const Routine& routine, int n_devices, int m,
                                  Rng& rng);
std::vector<int> sample_negatives(const Routine& routine,
                                  const Vocabulary& vocab, int m, Rng& rng);

// Skip-gram style loss over consecutive device pairs of each routine with m
// fresh negatives per pair, normalized by the total pair count.
double routine_reg_loss(std::span<const Routine> routines,
                        const Matrix& dev_embed, int m, Rng& rng);

// Tape version used inside the objective; dev is the device-embedding leaf.
Tape::Var routine_reg_graph(Tape& tape, Tape::Var dev, int n_devices,
                            std::span<const Routine> routines, int m,
                            Rng& rng);

// A recorded forward pass of the full objective, ready for backward.
struct LossGraph {
  Tape tape;
  ParamVars vars;
  Tape::Var loss;
};

// Cross-entropy over the batch plus lambda_reg times the routine loss. The
// regularizer is dropped (and consumes no randomness) under the reg_off
// ablation, when lambda_reg is zero, or when no routines are given.
LossGraph record_total_loss(ModelParams& params, const ModelConfig& config,
                            std::span<const Instance> batch,
                            std::span<const Routine> routines, Mode mode,
                            Rng& rng);

double total_loss(std::span<const Instance> batch,
                  std::span<const Routine> routines, ModelParams& params,
                  const ModelConfig& config, Mode mode, Rng& rng);

// Gradients of the recorded loss for every trainable tensor, in
// ModelParams::visit order. Fails on a non-finite loss before differentiating.
std::vector<Matrix> compute_gradients(LossGraph& graph);

// Validation mAP@1 of the current parameters, eval mode.
double validation_map1(ModelParams& params, const ModelConfig& config,
                       std::span<const Instance> val_set);

// Mini-batch Adam loop with early stopping on validation mAP@1. Keeps the
// best checkpoint under settings.checkpoint_dir and writes a per-epoch
// metrics CSV next to it. Deterministic for a fixed seed. trained_out, when
// given, receives the best-epoch parameters.
TrainReport train(std::span<const Instance> train_set,
                  std::span<const Instance> val_set,
                  std::span<const Routine> routines, const ModelConfig& config,
                  const TrainSettings& settings,
                  const std::optional<Vocabulary>& vocab = std::nullopt,
                  ModelParams* trained_out = nullptr);

}  // namespace smartsense
