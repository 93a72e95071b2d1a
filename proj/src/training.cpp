#include "smartsense/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <unordered_set>

#include "smartsense/evaluation.hpp"

namespace smartsense {

std::vector<int> sample_negatives(const Routine& routine, int n_devices,
                                  int m, Rng& rng) {
  if (m == 0) return {};
  const std::unordered_set<int> members(routine.devices.begin(),
                                        routine.devices.end());
  std::vector<int> candidates;
  candidates.reserve(n_devices);
  for (int device = 0; device < n_devices; ++device) {
    if (!members.contains(device)) candidates.push_back(device);
  }
  if (static_cast<int>(candidates.size()) < m) {
    throw UsageError(
        "sample_negatives: only " + std::to_string(candidates.size()) +
        " devices outside the routine; reduce the negative-sample count m");
  }
  // Partial Fisher-Yates: the first m slots become the sample.
  for (int i = 0; i < m; ++i) {
    const std::size_t j =
        i + static_cast<std::size_t>(next_below(rng, candidates.size() - i));
    std::swap(candidates[i], candidates[j]);
  }
  candidates.resize(m);
  return candidates;
}

std::vector<int> sample_negatives(const Routine& routine,
                                  const Vocabulary& vocab, int m, Rng& rng) {
  return sample_negatives(routine, vocab.device_count(), m, rng);
}

Tape::Var routine_reg_graph(Tape& tape, Tape::Var dev, int n_devices,
                            std::span<const Routine> routines, int m,
                            Rng& rng) {
  std::vector<Index> pos_a, pos_b, neg_a, neg_e;
  for (const Routine& routine : routines) {
    if (routine.devices.size() < 2) {
      throw UsageError("routine_reg_graph: routines must have >= 2 devices");
    }
    for (std::size_t j = 0; j + 1 < routine.devices.size(); ++j) {
      pos_a.push_back(routine.devices[j]);
      pos_b.push_back(routine.devices[j + 1]);
      for (const int negative : sample_negatives(routine, n_devices, m, rng)) {
        neg_a.push_back(routine.devices[j]);
        neg_e.push_back(negative);
      }
    }
  }
  const double pair_count = static_cast<double>(pos_a.size());

  Tape::Var e_a = tape.gather_rows(dev, std::move(pos_a));
  Tape::Var e_b = tape.gather_rows(dev, std::move(pos_b));
  // -log sigmoid(x) == softplus(-x)
  Tape::Var loss = tape.sum(
      tape.softplus(tape.scale(tape.rowwise_dot(e_a, e_b), -1.0)));
  if (!neg_a.empty()) {
    Tape::Var e_na = tape.gather_rows(dev, std::move(neg_a));
    Tape::Var e_ne = tape.gather_rows(dev, std::move(neg_e));
    loss = tape.add(loss,
                    tape.sum(tape.softplus(tape.rowwise_dot(e_na, e_ne))));
  }
  return tape.scale(loss, 1.0 / pair_count);
}

double routine_reg_loss(std::span<const Routine> routines,
                        const Matrix& dev_embed, int m, Rng& rng) {
  if (routines.empty()) return 0.0;
  Tape tape;
  Tape::Var dev = tape.constant(dev_embed);
  Tape::Var loss = routine_reg_graph(
      tape, dev, static_cast<int>(dev_embed.rows()), routines, m, rng);
  return tape.value(loss)(0, 0);
}

LossGraph record_total_loss(ModelParams& params, const ModelConfig& config,
                            std::span<const Instance> batch,
                            std::span<const Routine> routines, Mode mode,
                            Rng& rng) {
  if (batch.empty()) {
    throw UsageError("record_total_loss: batch must be non-empty");
  }
  LossGraph graph;
  graph.vars = ParamVars::leaves(graph.tape, params);

  Tape::Var logits = forward_logits_graph(graph.tape, graph.vars, config,
                                          batch, mode, rng, nullptr);
  std::vector<Index> targets;
  targets.reserve(batch.size());
  for (const Instance& instance : batch) {
    if (instance.target_control < 0 ||
        instance.target_control >= config.n_ctrl) {
      throw UsageError("record_total_loss: target control out of range");
    }
    targets.push_back(instance.target_control);
  }
  graph.loss = graph.tape.cross_entropy_mean(logits, std::move(targets));

  const bool reg_active = !config.ablations.reg_off &&
                          config.lambda_reg > 0.0 && !routines.empty();
  if (reg_active) {
    Tape::Var reg = routine_reg_graph(graph.tape, graph.vars.dev,
                                      config.n_dev, routines,
                                      config.negatives, rng);
    graph.loss =
        graph.tape.add(graph.loss, graph.tape.scale(reg, config.lambda_reg));
  }
  return graph;
}

double total_loss(std::span<const Instance> batch,
                  std::span<const Routine> routines, ModelParams& params,
                  const ModelConfig& config, Mode mode, Rng& rng) {
  LossGraph graph =
      record_total_loss(params, config, batch, routines, mode, rng);
  const double loss = graph.tape.value(graph.loss)(0, 0);
  if (!std::isfinite(loss)) throw NumericError("total_loss is not finite");
  return loss;
}

std::vector<Matrix> compute_gradients(LossGraph& graph) {
  if (!std::isfinite(graph.tape.value(graph.loss)(0, 0))) {
    throw NumericError("compute_gradients: loss is not finite");
  }
  graph.tape.backward(graph.loss);
  std::vector<Matrix> grads;
  grads.reserve(graph.vars.flat.size());
  for (Tape::Var v : graph.vars.flat) {
    grads.push_back(graph.tape.grad(v));
  }
  return grads;
}

double validation_map1(ModelParams& params, const ModelConfig& config,
                       std::span<const Instance> val_set) {
  Rng rng(0);  // unused in eval mode
  double sum = 0.0;
  constexpr std::size_t kChunk = 512;
  for (std::size_t at = 0; at < val_set.size(); at += kChunk) {
    const std::size_t n = std::min(kChunk, val_set.size() - at);
    Tape tape;
    ParamVars vars = ParamVars::leaves(tape, params);
    Tape::Var logits =
        forward_logits_graph(tape, vars, config, val_set.subspan(at, n),
                             Mode::kEval, rng, nullptr);
    const Matrix& scores = tape.value(logits);
    for (std::size_t i = 0; i < n; ++i) {
      const Vector row = scores.row(static_cast<Index>(i)).transpose();
      const int rank =
          rank_of_target(row, val_set[at + i].target_control);
      sum += map_at_k(rank, 1);
    }
  }
  return val_set.empty() ? 0.0 : sum / static_cast<double>(val_set.size());
}

TrainReport train(std::span<const Instance> train_set,
                  std::span<const Instance> val_set,
                  std::span<const Routine> routines, const ModelConfig& config,
                  const TrainSettings& settings,
                  const std::optional<Vocabulary>& vocab,
                  ModelParams* trained_out) {
  config.validate();
  if (train_set.empty() || val_set.empty()) {
    throw UsageError("train: train and validation sets must be non-empty");
  }
  if (settings.max_epochs < 1 || settings.patience < 1) {
    throw UsageError("train: max_epochs and patience must be >= 1");
  }

  std::filesystem::create_directories(settings.checkpoint_dir);
  const std::string checkpoint_path =
      (std::filesystem::path(settings.checkpoint_dir) / "best.ckpt").string();
  const std::string metrics_path =
      (std::filesystem::path(settings.checkpoint_dir) / "metrics.csv")
          .string();

  ModelParams params = ModelParams::init(config, settings.seed);
  AdamState adam = AdamState::zeros_like(params.tensors());
  AdamOptions adam_options;
  adam_options.lr = config.lr;
  adam_options.l2 = config.l2;

  // Separate stream from the one used for parameter initialization.
  Rng rng(settings.seed + 0x9E3779B97F4A7C15ULL);

  const bool reg_active = !config.ablations.reg_off &&
                          config.lambda_reg > 0.0 && !routines.empty();
  const int routine_batch =
      settings.routine_batch > 0
          ? std::min<int>(settings.routine_batch,
                          static_cast<int>(routines.size()))
          : std::min<int>(config.batch_size,
                          static_cast<int>(routines.size()));

  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<std::size_t> routine_order(routines.size());
  for (std::size_t i = 0; i < routine_order.size(); ++i) routine_order[i] = i;

  std::ofstream metrics(metrics_path);
  metrics << "epoch,train_loss,val_map1,seconds\n";

  TrainReport report;
  ModelParams best_params = params;
  int epochs_without_improvement = 0;
  long step = 0;

  for (int epoch = 0; epoch < settings.max_epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    shuffle(order, rng);

    double loss_sum = 0.0;
    std::size_t batches = 0;
    std::vector<Instance> batch;
    batch.reserve(config.batch_size);
    std::vector<Routine> step_routines;

    for (std::size_t at = 0; at < order.size();
         at += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t n = std::min<std::size_t>(config.batch_size,
                                                  order.size() - at);
      batch.clear();
      for (std::size_t i = 0; i < n; ++i) {
        batch.push_back(train_set[order[at + i]]);
      }

      step_routines.clear();
      if (reg_active) {
        if (routine_batch == static_cast<int>(routines.size())) {
          step_routines.assign(routines.begin(), routines.end());
        } else {
          for (int i = 0; i < routine_batch; ++i) {
            const std::size_t j =
                i + static_cast<std::size_t>(
                        next_below(rng, routine_order.size() - i));
            std::swap(routine_order[i], routine_order[j]);
            step_routines.push_back(routines[routine_order[i]]);
          }
        }
      }

      LossGraph graph = record_total_loss(params, config, batch,
                                          step_routines, Mode::kTrain, rng);
      const double loss = graph.tape.value(graph.loss)(0, 0);
      if (!std::isfinite(loss)) {
        throw NumericError("train: non-finite loss at step " +
                           std::to_string(step));
      }
      const std::vector<Matrix> grads = compute_gradients(graph);
      adam_step(params.tensors(), grads, adam, adam_options);
      loss_sum += loss;
      ++batches;
      ++step;
    }

    const double val_map1 = validation_map1(params, config, val_set);
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                      epoch_start)
            .count();

    EpochRecord record;
    record.train_loss = loss_sum / static_cast<double>(batches);
    record.val_map1 = val_map1;
    record.seconds = seconds;
    report.epochs.push_back(record);
    metrics << epoch + 1 << ',' << record.train_loss << ',' << val_map1 << ','
            << seconds << "\n";
    metrics.flush();

    if (report.best_epoch < 0 || val_map1 > report.best_val_map1) {
      report.best_epoch = epoch;
      report.best_val_map1 = val_map1;
      save_checkpoint(checkpoint_path, params, config, vocab);
      best_params = params;
      epochs_without_improvement = 0;
    } else {
      ++epochs_without_improvement;
      if (epochs_without_improvement >= settings.patience) break;
    }
  }

  report.checkpoint_path = checkpoint_path;
  if (trained_out != nullptr) *trained_out = std::move(best_params);
  return report;
}

}  // namespace smartsense
