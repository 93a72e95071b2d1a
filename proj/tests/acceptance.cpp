// Acceptance gate: one pass/fail line per criterion, nonzero exit on any
// required failure. The extended real-data criterion runs only when the
// dataset paths are supplied.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <sstream>

#include "smartsense/data.hpp"
#include "smartsense/evaluation.hpp"
#include "smartsense/model.hpp"
#include "smartsense/numeric.hpp"
#include "smartsense/synth.hpp"
#include "smartsense/training.hpp"

using namespace smartsense;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(const std::string& name, bool ok, const std::string& detail) {
  std::cout << (ok ? "[PASS] " : "[FAIL] ") << name << ": " << detail << "\n";
  std::cout.flush();
  if (!ok) ++g_failures;
}

void skip(const std::string& name, const std::string& detail) {
  std::cout << "[SKIP] " << name << ": " << detail << "\n";
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                       start)
      .count();
}

Matrix random_matrix(Index rows, Index cols, Rng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Index c = 0; c < cols; ++c) {
    for (Index r = 0; r < rows; ++r) {
      m(r, c) = next_uniform(rng, -scale, scale);
    }
  }
  return m;
}

Instance random_instance(const ModelConfig& config, Rng& rng) {
  Instance instance;
  for (int i = 0; i < config.window - 1; ++i) {
    instance.history.push_back(
        ActionEvent{static_cast<int>(next_below(rng, config.n_dev)),
                    static_cast<int>(next_below(rng, config.n_ctrl)),
                    static_cast<int>(next_below(rng, 7)),
                    static_cast<int>(next_below(rng, 8))});
  }
  instance.target_dow = static_cast<int>(next_below(rng, 7));
  instance.target_hour_bin = static_cast<int>(next_below(rng, 8));
  instance.target_control = static_cast<int>(next_below(rng, config.n_ctrl));
  return instance;
}

fs::path work_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("smartsense_acc_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// ---------------------------------------------------------------------------
// Criterion 1: analytic gradients of the full objective match central finite
// differences on the tiny configuration, max scaled error < 1e-4, under 10 s.
// ---------------------------------------------------------------------------
void criterion_gradients() {
  const auto start = std::chrono::steady_clock::now();

  ModelConfig config;
  config.d = 8;
  config.layers = 1;
  config.heads = 2;
  config.window = 4;
  config.n_dev = 6;
  config.n_ctrl = 8;
  config.dropout_p = 0.1;
  config.negatives = 2;
  config.lambda_reg = 1.0;

  ModelParams params = ModelParams::init(config, 12);
  // Central differences are only a valid oracle where the loss is smooth
  // within the +-eps bracket. Rectifier units with near-zero preactivations
  // break that, so the check evaluates at a parameter point where every
  // hidden unit is active by a margin far wider than the bracket reach:
  // |x W1| stays below 0.11 while the bias sits at 0.2.
  const auto open_rectifiers = [](QteWeights& qte) {
    for (QteLayerWeights& layer : qte.layers) {
      layer.fnn_w1 *= 0.1;
      layer.fnn_b1.setConstant(0.2);
    }
  };
  open_rectifiers(params.action_qte);
  open_rectifiers(params.sequence_qte);

  Rng data_rng(5);
  std::vector<Instance> batch{random_instance(config, data_rng),
                              random_instance(config, data_rng)};
  const std::vector<Routine> routines{{"r0", {0, 1, 2}}, {"r1", {3, 4}}};

  // All randomness (dropout masks, negative draws) restarts from the same
  // seed for every evaluation, so the loss is a fixed function of params.
  const auto loss_at = [&](ModelParams& p) {
    Rng rng(777);
    LossGraph graph =
        record_total_loss(p, config, batch, routines, Mode::kTrain, rng);
    return graph.tape.value(graph.loss)(0, 0);
  };

  Rng rng(777);
  LossGraph graph =
      record_total_loss(params, config, batch, routines, Mode::kTrain, rng);
  const std::vector<Matrix> analytic = compute_gradients(graph);

  const double eps = 1e-3;
  double max_err = 0.0;
  std::string worst;
  std::size_t slot = 0;
  params.visit([&](const std::string& name, Matrix& tensor) {
    const Matrix& grad = analytic[slot++];
    for (Index c = 0; c < tensor.cols(); ++c) {
      for (Index r = 0; r < tensor.rows(); ++r) {
        const double saved = tensor(r, c);
        tensor(r, c) = saved + eps;
        const double up = loss_at(params);
        tensor(r, c) = saved - eps;
        const double down = loss_at(params);
        tensor(r, c) = saved;
        const double numeric = (up - down) / (2.0 * eps);
        const double scale =
            std::max({1.0, std::abs(grad(r, c)), std::abs(numeric)});
        const double err = std::abs(grad(r, c) - numeric) / scale;
        if (err > max_err) {
          max_err = err;
          worst = name;
        }
      }
    }
  });

  const double elapsed = seconds_since(start);
  std::ostringstream detail;
  detail << "max scaled error " << max_err << " (worst tensor: " << worst
         << "), " << elapsed << " s";
  report("criterion 1 (gradient correctness)",
         max_err < 1e-4 && elapsed < 10.0, detail.str());
}

// ---------------------------------------------------------------------------
// Criterion 2: hr@k and map@k agree exactly with a full-sort oracle on 1000
// seeded random score vectors over 50 controls.
// ---------------------------------------------------------------------------
void criterion_metric_oracle() {
  Rng rng(99);
  const int n = 50;
  bool ok = true;
  for (int trial = 0; trial < 1000 && ok; ++trial) {
    Vector scores(n);
    if (trial % 5 == 0) {
      for (int i = 0; i < n; ++i) {
        scores(i) = static_cast<double>(next_below(rng, 7));
      }
    } else {
      for (int i = 0; i < n; ++i) scores(i) = next_uniform(rng, -1.0, 1.0);
    }
    const int target = static_cast<int>(next_below(rng, n));

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      if (scores(a) != scores(b)) return scores(a) > scores(b);
      return a < b;
    });
    const int oracle = 1 + static_cast<int>(std::find(order.begin(),
                                                      order.end(), target) -
                                            order.begin());
    const int rank = rank_of_target(scores, target);
    ok = ok && rank == oracle;
    for (const int k : {1, 3, 5}) {
      ok = ok && hr_at_k(rank, k) == (oracle <= k ? 1 : 0);
      ok = ok && map_at_k(rank, k) == (oracle <= k ? 1.0 / oracle : 0.0);
    }
  }
  report("criterion 2 (metric oracle equivalence)", ok,
         "1000 seeded vectors, exact agreement");
}

// ---------------------------------------------------------------------------
// Criterion 3: ablation identities.
// ---------------------------------------------------------------------------
void criterion_ablations() {
  // (a) seq_off output equals the mean of final-layer hidden rows.
  ModelConfig config;
  config.d = 16;
  config.layers = 2;
  config.heads = 2;
  config.window = 6;
  config.n_dev = 5;
  config.n_ctrl = 10;
  config.ablations.seq_off = true;
  ModelParams params = ModelParams::init(config, 21);
  Rng rng(4);
  const Matrix actions = random_matrix(config.window - 1, config.d, rng);
  Rng eval_rng(0);
  const Vector summary =
      encode_sequence(actions, 2, 6, params, config, Mode::kEval, eval_rng);
  Matrix hidden = actions + params.pos_embed;
  for (int l = 0; l < config.layers; ++l) {
    Rng r(0);
    hidden = self_attention_block(hidden, params.sequence_qte.layers[l],
                                  config, Mode::kEval, r)
                 .hidden;
  }
  const Vector mean = hidden.colwise().mean().transpose();
  const double seq_dev = (summary - mean).cwiseAbs().maxCoeff();
  report("criterion 3a (seq_off equals hidden-row mean)", seq_dev < 1e-9,
         "max deviation " + std::to_string(seq_dev));

  // (b) act_off equals the mean of the four raw embeddings exactly.
  ModelConfig act_config = config;
  act_config.ablations = {};
  act_config.ablations.act_off = true;
  ModelParams act_params = ModelParams::init(act_config, 22);
  const ActionEvent event{3, 7, 2, 5};
  Rng r2(0);
  const Vector encoded =
      encode_action(event, act_params, act_config, Mode::kEval, r2);
  const Vector expected =
      (act_params.dev_embed.row(3) + act_params.ctrl_embed.row(7) +
       act_params.dow_embed.row(2) + act_params.hour_embed.row(5))
          .transpose() /
      4.0;
  const double act_dev = (encoded - expected).cwiseAbs().maxCoeff();
  report("criterion 3b (act_off equals embedding mean)", act_dev == 0.0,
         "max deviation " + std::to_string(act_dev));

  // (c) with reg_off, training is bit-identical across routine files.
  ModelConfig train_config;
  train_config.d = 8;
  train_config.layers = 1;
  train_config.heads = 2;
  train_config.window = 4;
  train_config.n_dev = 6;
  train_config.n_ctrl = 8;
  train_config.batch_size = 16;
  train_config.negatives = 2;
  train_config.ablations.reg_off = true;
  Rng data_rng(31);
  std::vector<Instance> train_set, val_set;
  for (int i = 0; i < 48; ++i) {
    train_set.push_back(random_instance(train_config, data_rng));
  }
  for (int i = 0; i < 12; ++i) {
    val_set.push_back(random_instance(train_config, data_rng));
  }
  const auto run = [&](const std::vector<Routine>& routines,
                       const std::string& tag) {
    TrainSettings settings;
    settings.max_epochs = 2;
    settings.patience = 2;
    settings.seed = 13;
    settings.checkpoint_dir = work_dir("regoff_" + tag).string();
    ModelParams out = ModelParams::init(train_config, 0);
    train(train_set, val_set, routines, train_config, settings, std::nullopt,
          &out);
    return out;
  };
  ModelParams a = run({{"a", {0, 1}}}, "a");
  ModelParams b = run({{"b", {2, 3, 4, 5}}, {"c", {1, 5}}}, "b");
  double diff = 0.0;
  const auto ta = a.tensors();
  const auto tb = b.tensors();
  for (std::size_t i = 0; i < ta.size(); ++i) {
    diff = std::max(diff, (*ta[i] - *tb[i]).cwiseAbs().maxCoeff());
  }
  report("criterion 3c (reg_off ignores routine contents)", diff == 0.0,
         "max parameter difference " + std::to_string(diff));
}

// ---------------------------------------------------------------------------
// Criterion 4: structural invariants.
// ---------------------------------------------------------------------------
void criterion_structure() {
  ModelConfig config;
  config.d = 16;
  config.layers = 2;
  config.heads = 2;
  config.window = 6;
  config.n_dev = 5;
  config.n_ctrl = 12;
  config.dropout_p = 0.1;

  // Attention rows sum to 1 at every layer of both encoders.
  ModelParams params = ModelParams::init(config, 41);
  Rng data_rng(42);
  std::vector<Instance> batch;
  for (int i = 0; i < 6; ++i) {
    batch.push_back(random_instance(config, data_rng));
  }
  Tape tape;
  ParamVars vars = ParamVars::leaves(tape, params);
  ForwardTrace trace;
  Rng rng(3);
  Tape::Var logits = forward_logits_graph(tape, vars, config, batch,
                                          Mode::kTrain, rng, &trace);
  double worst_row_sum = 0.0;
  const auto check_rows = [&](const std::vector<std::vector<Tape::Var>>& all) {
    for (const auto& layer : all) {
      for (const Tape::Var head : layer) {
        const Matrix& attention = tape.value(head);
        for (Index r = 0; r < attention.rows(); ++r) {
          worst_row_sum = std::max(
              worst_row_sum, std::abs(attention.row(r).sum() - 1.0));
        }
      }
    }
  };
  check_rows(trace.action_attention);
  check_rows(trace.seq_attention);
  const bool layers_seen = trace.action_attention.size() == 2 &&
                           trace.seq_attention.size() == 2;
  report("criterion 4 (attention rows are stochastic at every layer)",
         layers_seen && worst_row_sum < 1e-12,
         "max |row sum - 1| = " + std::to_string(worst_row_sum));

  // predict_controls lies on the simplex.
  Rng r0(0);
  const Vector probs =
      predict_controls(batch[0], params, config, Mode::kEval, r0);
  report("criterion 4 (predicted probabilities sum to 1)",
         std::abs(probs.sum() - 1.0) < 1e-12 && probs.minCoeff() > 0.0,
         "|sum - 1| = " + std::to_string(std::abs(probs.sum() - 1.0)));

  // encode_action permutation invariance, 20 random draws.
  double worst_invariance = 0.0;
  for (int draw = 0; draw < 20; ++draw) {
    ModelParams p = ModelParams::init(config, 100 + draw);
    const ActionEvent event{2, 5, 3, 6};
    Rng ra(0);
    const Vector base = encode_action(event, p, config, Mode::kEval, ra);
    ModelParams cycled = p;
    cycled.dev_embed.row(2) = p.ctrl_embed.row(5);
    cycled.ctrl_embed.row(5) = p.dow_embed.row(3);
    cycled.dow_embed.row(3) = p.hour_embed.row(6);
    cycled.hour_embed.row(6) = p.dev_embed.row(2);
    Rng rb(0);
    const Vector rotated = encode_action(event, cycled, config, Mode::kEval,
                                         rb);
    worst_invariance = std::max(
        worst_invariance, (rotated - base).cwiseAbs().maxCoeff());
  }
  report("criterion 4 (encode_action slot permutation invariance)",
         worst_invariance < 1e-9,
         "max deviation " + std::to_string(worst_invariance));

  // self_attention_block permutation equivariance, 20 random draws.
  double worst_equivariance = 0.0;
  for (int draw = 0; draw < 20; ++draw) {
    ModelConfig block_config = config;
    block_config.layer_norm_enabled = draw % 2 == 0;
    ModelParams p = ModelParams::init(block_config, 200 + draw);
    Rng rx(7 + draw);
    const Matrix x = random_matrix(5, block_config.d, rx);
    const std::vector<Index> perm{3, 0, 4, 1, 2};
    Matrix permuted(x.rows(), x.cols());
    for (Index i = 0; i < x.rows(); ++i) permuted.row(i) = x.row(perm[i]);
    Rng r1(0), r2(0);
    const Matrix base =
        self_attention_block(x, p.action_qte.layers[0], block_config,
                             Mode::kEval, r1)
            .hidden;
    const Matrix shuffled =
        self_attention_block(permuted, p.action_qte.layers[0], block_config,
                             Mode::kEval, r2)
            .hidden;
    for (Index i = 0; i < x.rows(); ++i) {
      worst_equivariance = std::max(
          worst_equivariance,
          (shuffled.row(i) - base.row(perm[i])).cwiseAbs().maxCoeff());
    }
  }
  report("criterion 4 (self-attention permutation equivariance)",
         worst_equivariance < 1e-9,
         "max deviation " + std::to_string(worst_equivariance));

  // Zero parameters predict the uniform distribution.
  ModelParams zero = ModelParams::init(config, 0);
  zero.visit([](const std::string&, Matrix& m) { m.setZero(); });
  Rng rz(0);
  const Vector uniform =
      predict_controls(batch[0], zero, config, Mode::kEval, rz);
  const double uniform_dev =
      (uniform.array() - 1.0 / config.n_ctrl).abs().maxCoeff();
  report("criterion 4 (zero parameters predict uniform)", uniform_dev < 1e-12,
         "max deviation from 1/N = " + std::to_string(uniform_dev));
}

// Shared state between criteria 5 and 6.
struct SynthTrained {
  SplitResult split;
  std::vector<Routine> routines;
  ModelConfig config;
  TrainSettings settings;
  ModelParams reg_on_params;
  EvalReport bayes;
  bool trained = false;
};

SynthSpec acceptance_spec() {
  SynthSpec spec;
  spec.n_devices = 10;
  spec.n_controls_per_device = 4;
  spec.n_sessions = 2000;
  spec.session_len = 20;
  spec.window_length = 10;
  spec.event_gap_seconds = 120;
  spec.capricious_p = 0.1;
  spec.seed = 7;
  // One deterministic rule set, conditioned on the hour group: morning-half
  // contexts cycle within the device, evening-half contexts hop devices.
  for (int c = 0; c < spec.n_controls(); ++c) {
    const int dev = c / 4;
    const int k = c % 4;
    spec.rules.push_back(
        PatternRule{c, {}, {0, 1, 2, 3}, dev * 4 + (k + 1) % 4, 0.9});
    spec.rules.push_back(
        PatternRule{c, {}, {4, 5, 6, 7}, ((dev + 1) % 10) * 4 + k, 0.9});
  }
  spec.routines.push_back(RoutineSpec{{0, 1, 2}, 0.25});
  spec.routines.push_back(RoutineSpec{{3, 4, 5}, 0.25});
  spec.routines.push_back(RoutineSpec{{6, 7, 8}, 0.25});
  return spec;
}

// ---------------------------------------------------------------------------
// Criterion 5: the trained model reaches 0.9 x bayes-optimal test mAP@1 and
// beats the popularity baseline by at least 0.15, inside 5 minutes.
// ---------------------------------------------------------------------------
void criterion_synthetic_learning(SynthTrained& shared) {
  const auto start = std::chrono::steady_clock::now();
  const SynthSpec spec = acceptance_spec();
  const fs::path dir = work_dir("synth");
  shared.bayes = write_synth_dataset(spec, dir.string()).bayes_optimal;

  const LogParseResult parsed =
      parse_log_csv((dir / "log.csv").string(), std::nullopt, 0);
  std::vector<Instance> instances;
  for (const Session& session : parsed.sessions) {
    const auto windows = make_windows(session, spec.window_length);
    instances.insert(instances.end(), windows.begin(), windows.end());
  }
  shared.split = split_instances(std::move(instances), 1);
  shared.routines =
      parse_routines((dir / "routines.csv").string(), parsed.vocab);

  ModelConfig config;
  config.d = 32;
  config.layers = 1;
  config.heads = 4;
  config.window = spec.window_length;
  config.n_dev = parsed.vocab.device_count();
  config.n_ctrl = parsed.vocab.control_count();
  config.dropout_p = 0.1;
  config.batch_size = 64;
  config.lr = 0.001;
  config.lambda_reg = 0.1;
  config.negatives = 5;
  config.tie_output = true;
  shared.config = config;

  TrainSettings settings;
  settings.max_epochs = 30;
  settings.patience = 10;
  settings.seed = 3;
  settings.checkpoint_dir = (dir / "run").string();
  shared.settings = settings;

  ModelParams trained = ModelParams::init(config, 0);
  train(shared.split.train, shared.split.val, shared.routines, config,
        settings, std::nullopt, &trained);
  shared.reg_on_params = std::move(trained);
  shared.trained = true;

  const BatchScorer scorer = [&](std::span<const Instance> chunk) {
    Tape tape;
    ParamVars vars = ParamVars::leaves(tape, shared.reg_on_params);
    Rng rng(0);
    Tape::Var logits = forward_logits_graph(tape, vars, shared.config, chunk,
                                            Mode::kEval, rng, nullptr);
    return tape.value(logits);
  };
  const EvalReport model_report =
      evaluate_model(scorer, shared.split.test, "smartsense");
  const EvalReport pop_report = evaluate_model(
      pop_baseline(shared.split.train, config.n_ctrl), shared.split.test,
      "pop");

  const double elapsed = seconds_since(start);
  const double threshold = 0.9 * shared.bayes.map1;
  std::ostringstream detail;
  detail << "test mAP@1 " << model_report.map1 << " vs 0.9*bayes "
         << threshold << " (bayes " << shared.bayes.map1 << "), pop "
         << pop_report.map1 << ", " << elapsed << " s";
  report("criterion 5 (synthetic learning)",
         model_report.map1 >= threshold &&
             model_report.map1 >= pop_report.map1 + 0.15 && elapsed < 300.0,
         detail.str());
}

// ---------------------------------------------------------------------------
// Criterion 6: routine regularization pulls intra-routine devices together
// and spreads the similarity distribution.
// ---------------------------------------------------------------------------
void criterion_regularization_effect(SynthTrained& shared) {
  if (!shared.trained) {
    report("criterion 6 (regularization effect)", false,
           "skipped: criterion 5 training unavailable");
    return;
  }
  ModelConfig off_config = shared.config;
  off_config.ablations.reg_off = true;
  TrainSettings settings = shared.settings;
  settings.checkpoint_dir = work_dir("synth_regoff").string();
  ModelParams reg_off_params = ModelParams::init(off_config, 0);
  train(shared.split.train, shared.split.val, shared.routines, off_config,
        settings, std::nullopt, &reg_off_params);

  const std::vector<std::vector<int>> groups{{0, 1, 2}, {3, 4, 5}, {6, 7, 8}};
  const auto stats = [&](ModelParams& params) {
    const Matrix sim = embedding_similarity(params.dev_embed);
    const int n = static_cast<int>(sim.rows());
    const auto same_group = [&](int a, int b) {
      for (const auto& group : groups) {
        bool has_a = false, has_b = false;
        for (const int d : group) {
          has_a = has_a || d == a;
          has_b = has_b || d == b;
        }
        if (has_a && has_b) return true;
      }
      return false;
    };
    double intra = 0.0, inter = 0.0, sum = 0.0, sum_sq = 0.0;
    int intra_n = 0, inter_n = 0, total = 0;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        if (i == j) continue;
        sum += sim(i, j);
        sum_sq += sim(i, j) * sim(i, j);
        ++total;
        if (same_group(i, j)) {
          intra += sim(i, j);
          ++intra_n;
        } else {
          inter += sim(i, j);
          ++inter_n;
        }
      }
    }
    const double mean = sum / total;
    return std::tuple{intra / intra_n - inter / inter_n,
                      std::sqrt(sum_sq / total - mean * mean)};
  };

  const auto [gap_on, std_on] = stats(shared.reg_on_params);
  const auto [gap_off, std_off] = stats(reg_off_params);
  std::ostringstream detail;
  detail << "intra-inter gap on=" << gap_on << " off=" << gap_off
         << " (need on-off >= 0.1); off-diagonal std on=" << std_on
         << " off=" << std_off << " (need on > off)";
  report("criterion 6 (regularization effect)",
         gap_on - gap_off >= 0.1 && std_on > std_off, detail.str());
}

// ---------------------------------------------------------------------------
// Criterion 7: determinism and persistence.
// ---------------------------------------------------------------------------
void criterion_determinism(SynthTrained& shared) {
  ModelConfig config;
  config.d = 12;
  config.layers = 1;
  config.heads = 2;
  config.window = 10;
  config.dropout_p = 0.1;
  config.batch_size = 128;
  config.negatives = 2;

  std::vector<Instance> train_set, val_set;
  if (shared.trained) {
    config.n_dev = shared.config.n_dev;
    config.n_ctrl = shared.config.n_ctrl;
    train_set.assign(shared.split.train.begin(),
                     shared.split.train.begin() + 2000);
    val_set.assign(shared.split.val.begin(), shared.split.val.begin() + 500);
  } else {
    config.n_dev = 6;
    config.n_ctrl = 12;
    Rng rng(3);
    for (int i = 0; i < 512; ++i) {
      train_set.push_back(random_instance(config, rng));
    }
    for (int i = 0; i < 128; ++i) {
      val_set.push_back(random_instance(config, rng));
    }
  }
  const std::vector<Routine> routines{{"r", {0, 1}}, {"s", {2, 3}}};

  const auto run = [&](const std::string& tag) {
    TrainSettings settings;
    settings.max_epochs = 3;
    settings.patience = 3;
    settings.seed = 11;
    settings.checkpoint_dir = work_dir("det_" + tag).string();
    return train(train_set, val_set, routines, config, settings);
  };
  const TrainReport a = run("a");
  const TrainReport b = run("b");
  bool identical = a.epochs.size() == b.epochs.size();
  for (std::size_t i = 0; identical && i < a.epochs.size(); ++i) {
    identical = a.epochs[i].train_loss == b.epochs[i].train_loss &&
                a.epochs[i].val_map1 == b.epochs[i].val_map1;
  }
  report("criterion 7 (identical seeds give identical loss curves)",
         identical, std::to_string(a.epochs.size()) + " epochs compared");

  // Checkpoint round-trip is value-exact and feeds recommend unchanged.
  ModelParams params = ModelParams::init(config, 77);
  const fs::path dir = work_dir("persist");
  Vocabulary vocab;
  const int per_device = config.n_ctrl / config.n_dev;
  for (int d = 0; d < config.n_dev; ++d) {
    for (int k = 0; k < per_device; ++k) {
      vocab.add_control("dev" + std::to_string(d), "c" + std::to_string(k));
    }
  }
  save_checkpoint((dir / "model.ckpt").string(), params, config, vocab);
  Checkpoint loaded = load_checkpoint((dir / "model.ckpt").string());
  double diff = 0.0;
  const auto orig = params.tensors();
  const auto rest = loaded.params.tensors();
  for (std::size_t i = 0; i < orig.size(); ++i) {
    diff = std::max(diff, (*orig[i] - *rest[i]).cwiseAbs().maxCoeff());
  }
  report("criterion 7 (checkpoint round-trip is value-exact)", diff == 0.0,
         "max tensor difference " + std::to_string(diff));

  Rng rng(5);
  bool match = true;
  for (int i = 0; i < 5 && match; ++i) {
    const Instance instance = random_instance(config, rng);
    Rng r1(0), r2(0);
    const Vector direct =
        predict_controls(instance, params, config, Mode::kEval, r1);
    const Vector via_checkpoint = predict_controls(
        instance, loaded.params, loaded.config, Mode::kEval, r2);
    match = (direct - via_checkpoint).cwiseAbs().maxCoeff() == 0.0;
  }
  report("criterion 7 (recommend path matches in-memory predictions)", match,
         "5 instances compared bitwise");
}

// ---------------------------------------------------------------------------
// Criterion 8 (extended, optional): real-data reproduction.
// ---------------------------------------------------------------------------
void criterion_real_data(const std::string& log_path,
                         const std::string& routines_path, int tz_minutes) {
  if (log_path.empty() || routines_path.empty()) {
    skip("criterion 8 (real-data reproduction, optional)",
         "provide --real-log and --real-routines to run");
    return;
  }
  const LogParseResult parsed = parse_log_csv(log_path, std::nullopt,
                                              tz_minutes);
  std::vector<Instance> instances;
  for (const Session& session : parsed.sessions) {
    const auto windows = make_windows(session, 10);
    instances.insert(instances.end(), windows.begin(), windows.end());
  }
  SplitResult split = split_instances(std::move(instances), 0);
  const auto routines = parse_routines(routines_path, parsed.vocab);

  ModelConfig config;  // paper-scale defaults
  config.n_dev = parsed.vocab.device_count();
  config.n_ctrl = parsed.vocab.control_count();

  TrainSettings settings;
  settings.max_epochs = 100;
  settings.patience = 5;
  settings.seed = 0;
  settings.checkpoint_dir = work_dir("real").string();

  ModelParams trained = ModelParams::init(config, 0);
  train(split.train, split.val, routines, config, settings, parsed.vocab,
        &trained);
  const BatchScorer scorer = [&](std::span<const Instance> chunk) {
    Tape tape;
    ParamVars vars = ParamVars::leaves(tape, trained);
    Rng rng(0);
    Tape::Var logits = forward_logits_graph(tape, vars, config, chunk,
                                            Mode::kEval, rng, nullptr);
    return tape.value(logits);
  };
  const EvalReport model_report =
      evaluate_model(scorer, split.test, "smartsense");
  const EvalReport pop_report =
      evaluate_model(pop_baseline(split.train, config.n_ctrl), split.test,
                     "pop");
  std::ostringstream detail;
  detail << "model mAP@1 " << model_report.map1
         << " (target 0.6515 +- 0.03), pop " << pop_report.map1
         << " (target 0.3416 +- 0.01)";
  report("criterion 8 (real-data reproduction, optional)",
         std::abs(model_report.map1 - 0.6515) <= 0.03 &&
             std::abs(pop_report.map1 - 0.3416) <= 0.01,
         detail.str());
}

}  // namespace

void guarded(const std::string& name, const std::function<void()>& body) {
  try {
    body();
  } catch (const std::exception& e) {
    report(name, false, std::string("unexpected error: ") + e.what());
  }
}

int main(int argc, char** argv) {
  std::string real_log, real_routines;
  int real_tz = 540;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--real-log" && i + 1 < argc) real_log = argv[++i];
    else if (arg == "--real-routines" && i + 1 < argc)
      real_routines = argv[++i];
    else if (arg == "--real-tz" && i + 1 < argc) real_tz = std::stoi(argv[++i]);
  }

  SynthTrained shared;
  guarded("criterion 1 (gradient correctness)", criterion_gradients);
  guarded("criterion 2 (metric oracle equivalence)", criterion_metric_oracle);
  guarded("criterion 3 (ablation identities)", criterion_ablations);
  guarded("criterion 4 (structural invariants)", criterion_structure);
  guarded("criterion 5 (synthetic learning)",
          [&] { criterion_synthetic_learning(shared); });
  guarded("criterion 6 (regularization effect)",
          [&] { criterion_regularization_effect(shared); });
  guarded("criterion 7 (determinism and persistence)",
          [&] { criterion_determinism(shared); });
  guarded("criterion 8 (real-data reproduction, optional)",
          [&] { criterion_real_data(real_log, real_routines, real_tz); });

  if (g_failures > 0) {
    std::cout << g_failures << " criterion check(s) failed\n";
    return 1;
  }
  std::cout << "all required criteria passed\n";
  return 0;
}
