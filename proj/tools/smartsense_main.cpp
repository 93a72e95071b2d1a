#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "smartsense/data.hpp"
#include "smartsense/evaluation.hpp"
#include "smartsense/model.hpp"
#include "smartsense/synth.hpp"
#include "smartsense/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace smartsense;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

struct PreparedData {
  Vocabulary vocab;
  std::vector<Instance> train, val, test;
  std::vector<Routine> routines;
  int window = 10;
};

PreparedData load_prepared(const std::string& dir) {
  PreparedData data;
  data.vocab = load_vocabulary((fs::path(dir) / "vocab.json").string());
  data.train = load_instances((fs::path(dir) / "train.csv").string(),
                              &data.window);
  data.val = load_instances((fs::path(dir) / "val.csv").string(), nullptr);
  data.test = load_instances((fs::path(dir) / "test.csv").string(), nullptr);
  const fs::path routines_path = fs::path(dir) / "routines.csv";
  if (fs::exists(routines_path)) {
    data.routines = load_routines(routines_path.string());
  }
  return data;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path + ": cannot open file");
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw ParseError(path + ": cannot open for writing");
  out << text;
}

std::ostream& open_output(std::ofstream& file, const std::string& path) {
  if (path.empty()) return std::cout;
  file.open(path);
  if (!file) throw ParseError(path + ": cannot open for writing");
  return file;
}

int run_prepare(const std::string& log_path, const std::string& routines_path,
                const std::string& manifest_path, const std::string& out_dir,
                std::uint64_t seed) {
  const DatasetManifest manifest = load_manifest(manifest_path);
  LogParseResult parsed =
      parse_log_csv(log_path, std::nullopt, manifest.tz_offset_minutes);
  if (parsed.skipped_rows > 0) {
    std::cerr << "skipped " << parsed.skipped_rows << " rows\n";
  }

  std::vector<Instance> instances;
  for (const Session& session : parsed.sessions) {
    auto windows = make_windows(session, manifest.window_length);
    instances.insert(instances.end(),
                     std::make_move_iterator(windows.begin()),
                     std::make_move_iterator(windows.end()));
  }
  SplitResult split = split_instances(std::move(instances), seed);

  parsed.vocab.counts.assign(parsed.vocab.control_count(), 0);
  for (const Instance& instance : split.train) {
    ++parsed.vocab.counts[instance.target_control];
  }

  std::vector<Routine> routines;
  if (!routines_path.empty()) {
    routines = parse_routines(routines_path, parsed.vocab);
  }

  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  save_vocabulary(parsed.vocab, (dir / "vocab.json").string());
  save_instances(split.train, manifest.window_length,
                 (dir / "train.csv").string());
  save_instances(split.val, manifest.window_length,
                 (dir / "val.csv").string());
  save_instances(split.test, manifest.window_length,
                 (dir / "test.csv").string());
  save_routines(routines, (dir / "routines.csv").string());
  save_manifest(manifest, (dir / "manifest.json").string());

  std::cout << "sessions=" << parsed.sessions.size()
            << " instances=" << split.train.size() + split.val.size() +
                                    split.test.size()
            << " train=" << split.train.size() << " val=" << split.val.size()
            << " test=" << split.test.size()
            << " routines=" << routines.size()
            << " devices=" << parsed.vocab.device_count()
            << " controls=" << parsed.vocab.control_count() << "\n";
  return kExitOk;
}

int run_train(const std::string& data_dir, const std::string& config_path,
              const std::string& out_dir, const std::string& ablate) {
  const PreparedData data = load_prepared(data_dir);

  json config_json = json::object();
  if (!config_path.empty()) config_json = read_json_file(config_path);
  ModelConfig config = ModelConfig::from_json(config_json);
  config.window = data.window;
  config.n_dev = data.vocab.device_count();
  config.n_ctrl = data.vocab.control_count();

  if (ablate == "act") {
    config.ablations.act_off = true;
  } else if (ablate == "seq") {
    config.ablations.seq_off = true;
  } else if (ablate == "reg") {
    config.ablations.reg_off = true;
  } else if (ablate == "all") {
    config.ablations = {true, true, true};
  } else if (!ablate.empty()) {
    throw UsageError("--ablate must be one of act|seq|reg|all");
  }

  TrainSettings settings;
  const auto get = [&](const char* key, auto& field) {
    if (config_json.contains(key)) {
      field = config_json.at(key).get<std::decay_t<decltype(field)>>();
    }
  };
  get("max_epochs", settings.max_epochs);
  get("patience", settings.patience);
  get("seed", settings.seed);
  get("routine_batch", settings.routine_batch);
  settings.checkpoint_dir = out_dir;

  const TrainReport report =
      train(data.train, data.val, data.routines, config, settings, data.vocab);

  json epochs = json::array();
  for (const EpochRecord& record : report.epochs) {
    epochs.push_back({{"train_loss", record.train_loss},
                      {"val_map1", record.val_map1},
                      {"seconds", record.seconds}});
  }
  write_text((fs::path(out_dir) / "train_report.json").string(),
             json{{"best_epoch", report.best_epoch + 1},
                  {"best_val_map1", report.best_val_map1},
                  {"checkpoint", report.checkpoint_path},
                  {"epochs", epochs}}
                     .dump(2) +
                 "\n");
  std::cout << "best_epoch=" << report.best_epoch + 1
            << " best_val_map1=" << report.best_val_map1
            << " checkpoint=" << report.checkpoint_path << "\n";
  return kExitOk;
}

BatchScorer model_scorer(ModelParams& params, const ModelConfig& config) {
  return [&params, config](std::span<const Instance> batch) {
    Tape tape;
    ParamVars vars = ParamVars::leaves(tape, params);
    Rng rng(0);
    Tape::Var logits = forward_logits_graph(tape, vars, config, batch,
                                            Mode::kEval, rng, nullptr);
    return tape.value(logits);
  };
}

int run_evaluate(const std::string& checkpoint_path,
                 const std::string& data_dir, const std::string& baseline,
                 const std::string& json_out, const std::string& csv_out) {
  if (baseline.empty() && checkpoint_path.empty()) {
    throw UsageError("evaluate needs --checkpoint or --baseline pop");
  }
  const PreparedData data = load_prepared(data_dir);
  EvalReport report;
  if (baseline == "pop") {
    report = evaluate_model(pop_baseline(data.train,
                                         data.vocab.control_count()),
                            data.test, "pop");
  } else if (!baseline.empty()) {
    throw UsageError("--baseline supports only 'pop'");
  } else {
    Checkpoint checkpoint = load_checkpoint(checkpoint_path);
    if (checkpoint.config.n_ctrl != data.vocab.control_count()) {
      throw ParseError("checkpoint and dataset disagree on control count");
    }
    report = evaluate_model(model_scorer(checkpoint.params, checkpoint.config),
                            data.test, "smartsense");
  }
  std::cout << report.csv_header() << "\n" << report.csv_row() << "\n";
  if (!json_out.empty()) write_text(json_out, report.to_json() + "\n");
  if (!csv_out.empty()) {
    write_text(csv_out, report.csv_header() + "\n" + report.csv_row() + "\n");
  }
  return kExitOk;
}

ActionEvent event_from_json(const json& j, const ModelConfig& config,
                            const std::optional<Vocabulary>& vocab) {
  ActionEvent event;
  const json& device = j.at("device");
  const json& control = j.at("control");
  if (device.is_string() || control.is_string()) {
    if (!vocab.has_value()) {
      throw UsageError("checkpoint has no vocabulary; use integer indices");
    }
    event.device = vocab->device_index(device.get<std::string>());
    event.control = vocab->control_index(device.get<std::string>(),
                                         control.get<std::string>());
    if (event.device < 0 || event.control < 0) {
      throw UsageError("unknown device/control name in history");
    }
  } else {
    event.device = device.get<int>();
    event.control = control.get<int>();
    if (vocab.has_value() && event.control >= 0 &&
        event.control < vocab->control_count() &&
        vocab->control_device(event.control) != event.device) {
      throw UsageError("history control does not belong to its device");
    }
  }
  event.dow = j.at("dow").get<int>();
  event.hour_bin = j.at("hour_bin").get<int>();
  if (event.device < 0 || event.device >= config.n_dev || event.control < 0 ||
      event.control >= config.n_ctrl || event.dow < 0 || event.dow >= 7 ||
      event.hour_bin < 0 || event.hour_bin >= 8) {
    throw UsageError("history event index out of range");
  }
  return event;
}

Instance instance_from_history(const std::string& history_path, int dow,
                               int hour_bin, const ModelConfig& config,
                               const std::optional<Vocabulary>& vocab) {
  const json history = read_json_file(history_path);
  if (!history.is_array() ||
      history.size() != static_cast<std::size_t>(config.window) - 1) {
    throw UsageError("history must be an array of exactly " +
                     std::to_string(config.window - 1) + " events");
  }
  if (dow < 0 || dow >= 7 || hour_bin < 0 || hour_bin >= 8) {
    throw UsageError("--dow must be in [0,7) and --hour in [0,8)");
  }
  Instance instance;
  for (const json& entry : history) {
    instance.history.push_back(event_from_json(entry, config, vocab));
  }
  instance.target_dow = dow;
  instance.target_hour_bin = hour_bin;
  instance.target_control = 0;
  return instance;
}

std::string control_label(const std::optional<Vocabulary>& vocab, int index) {
  if (vocab.has_value() && index < vocab->control_count()) {
    const auto& [device, control] = vocab->control_name(index);
    return device + ":" + control;
  }
  return "control_" + std::to_string(index);
}

int run_recommend(const std::string& checkpoint_path,
                  const std::string& history_path, int dow, int hour_bin,
                  int k) {
  Checkpoint checkpoint = load_checkpoint(checkpoint_path);
  if (k < 1 || k > checkpoint.config.n_ctrl) {
    throw UsageError("--k must be in [1, " +
                     std::to_string(checkpoint.config.n_ctrl) + "]");
  }
  const Instance instance = instance_from_history(
      history_path, dow, hour_bin, checkpoint.config, checkpoint.vocab);
  Rng rng(0);
  const Vector probs = predict_controls(instance, checkpoint.params,
                                        checkpoint.config, Mode::kEval, rng);

  std::vector<int> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (probs(a) != probs(b)) return probs(a) > probs(b);
    return a < b;
  });

  std::cout << std::fixed << std::setprecision(6);
  for (int i = 0; i < k; ++i) {
    std::cout << control_label(checkpoint.vocab, order[i]) << ','
              << probs(order[i]) << "\n";
  }
  return kExitOk;
}

int run_analyze(const std::string& checkpoint_path, const std::string& mode,
                const std::string& device, const std::string& control,
                int dow, int hour_bin, const std::string& history_path,
                const std::string& out_path) {
  Checkpoint checkpoint = load_checkpoint(checkpoint_path);
  ModelParams& params = checkpoint.params;
  const ModelConfig& config = checkpoint.config;
  std::ofstream file;
  std::ostream& out = open_output(file, out_path);
  out << std::setprecision(10);

  if (mode == "attention") {
    if (device.empty() || control.empty()) {
      throw UsageError("attention mode requires --device and --control");
    }
    json device_json = json::parse(device, nullptr, false);
    json control_json = json::parse(control, nullptr, false);
    if (!device_json.is_number()) device_json = device;
    if (!control_json.is_number()) control_json = control;
    if (dow < 0 || hour_bin < 0) {
      throw UsageError("attention mode requires --dow and --hour");
    }
    const json event_json{{"device", device_json},
                          {"control", control_json},
                          {"dow", dow},
                          {"hour_bin", hour_bin}};
    const ActionEvent event =
        event_from_json(event_json, config, checkpoint.vocab);
    const Matrix attention = export_action_attention(event, params, config);
    const char* slots[4] = {"device", "control", "dow", "hour"};
    out << "slot,device,control,dow,hour\n";
    for (int r = 0; r < 4; ++r) {
      out << slots[r];
      for (int c = 0; c < 4; ++c) out << ',' << attention(r, c);
      out << "\n";
    }
  } else if (mode == "seq-attention") {
    if (history_path.empty()) {
      throw UsageError("seq-attention mode requires --history");
    }
    const Instance instance = instance_from_history(
        history_path, dow, hour_bin, config, checkpoint.vocab);
    const Vector alpha = export_sequence_attention(instance, params, config);
    out << "position,weight\n";
    for (Index i = 0; i < alpha.size(); ++i) {
      out << i + 1 << ',' << alpha(i) << "\n";
    }
  } else if (mode == "device-sim") {
    const Matrix sim = embedding_similarity(params.dev_embed);
    out << "device";
    for (int i = 0; i < config.n_dev; ++i) {
      out << ',' << (checkpoint.vocab ? checkpoint.vocab->device_name(i)
                                      : "dev_" + std::to_string(i));
    }
    out << "\n";
    for (int r = 0; r < config.n_dev; ++r) {
      out << (checkpoint.vocab ? checkpoint.vocab->device_name(r)
                               : "dev_" + std::to_string(r));
      for (int c = 0; c < config.n_dev; ++c) out << ',' << sim(r, c);
      out << "\n";
    }
  } else if (mode == "hour-sim") {
    const Matrix sim = embedding_similarity(params.hour_embed);
    const int n = config.n_hour;
    out << "delta_bins,mean_cosine\n";
    for (int delta = 0; delta <= n / 2; ++delta) {
      double sum = 0.0;
      int count = 0;
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
          const int diff = std::abs(i - j);
          if (std::min(diff, n - diff) == delta) {
            sum += sim(i, j);
            ++count;
          }
        }
      }
      out << delta << ',' << sum / count << "\n";
    }
  } else {
    throw UsageError(
        "--mode must be attention|seq-attention|device-sim|hour-sim");
  }
  return kExitOk;
}

int run_synth(const std::string& spec_path, const std::string& out_dir) {
  const SynthSpec spec = SynthSpec::from_json(read_json_file(spec_path));
  const SynthResult result = write_synth_dataset(spec, out_dir);
  std::cout << "sessions=" << spec.n_sessions
            << " target_positions=" << result.target_positions
            << " bayes_map1=" << result.bayes_optimal.map1 << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Smart-home action recommender"};
  app.require_subcommand(1);

  std::string log_path, routines_path, manifest_path, out_dir;
  std::uint64_t seed = 0;
  CLI::App* prepare = app.add_subcommand(
      "prepare", "Build vocabularies, window instances and splits");
  prepare->add_option("--log", log_path, "Log CSV")->required();
  prepare->add_option("--routines", routines_path, "Routine CSV");
  prepare->add_option("--manifest", manifest_path, "Dataset manifest JSON")
      ->required();
  prepare->add_option("--out", out_dir, "Output directory")->required();
  prepare->add_option("--seed", seed, "Split seed");

  std::string data_dir, config_path, ablate;
  CLI::App* train_cmd =
      app.add_subcommand("train", "Train a model on prepared data");
  train_cmd->add_option("--data", data_dir, "Prepared data directory")
      ->required();
  train_cmd->add_option("--config", config_path, "Training config JSON");
  train_cmd->add_option("--out", out_dir, "Output directory")->required();
  train_cmd->add_option("--ablate", ablate, "act|seq|reg|all");

  std::string checkpoint_path, baseline, json_out, csv_out;
  CLI::App* evaluate_cmd =
      app.add_subcommand("evaluate", "Score a checkpoint on the test split");
  evaluate_cmd->add_option("--checkpoint", checkpoint_path, "Checkpoint");
  evaluate_cmd->add_option("--data", data_dir, "Prepared data directory")
      ->required();
  evaluate_cmd->add_option("--baseline", baseline, "pop");
  evaluate_cmd->add_option("--json", json_out, "Write the report as JSON");
  evaluate_cmd->add_option("--csv", csv_out, "Write the report as CSV");

  std::string history_path;
  int dow = -1, hour_bin = -1, k = 5;
  CLI::App* recommend_cmd =
      app.add_subcommand("recommend", "Rank controls for a 9-event history");
  recommend_cmd->add_option("--checkpoint", checkpoint_path, "Checkpoint")
      ->required();
  recommend_cmd->add_option("--history", history_path, "History JSON")
      ->required();
  recommend_cmd->add_option("--dow", dow, "Target day of week")->required();
  recommend_cmd->add_option("--hour", hour_bin, "Target 3-hour bin")
      ->required();
  recommend_cmd->add_option("--k", k, "List length");

  std::string mode, device, control;
  CLI::App* analyze_cmd =
      app.add_subcommand("analyze", "Export attention and similarity CSVs");
  analyze_cmd->add_option("--checkpoint", checkpoint_path, "Checkpoint")
      ->required();
  analyze_cmd->add_option("--mode", mode,
                          "attention|seq-attention|device-sim|hour-sim")
      ->required();
  analyze_cmd->add_option("--device", device, "Device name or index");
  analyze_cmd->add_option("--control", control, "Control name or index");
  analyze_cmd->add_option("--dow", dow, "Day of week");
  analyze_cmd->add_option("--hour", hour_bin, "3-hour bin");
  analyze_cmd->add_option("--history", history_path, "History JSON");
  analyze_cmd->add_option("--out", out_dir, "Output CSV path");

  std::string spec_path;
  CLI::App* synth_cmd =
      app.add_subcommand("synth", "Generate a synthetic dataset");
  synth_cmd->add_option("--spec", spec_path, "Synth spec JSON")->required();
  synth_cmd->add_option("--out", out_dir, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (prepare->parsed()) {
      return run_prepare(log_path, routines_path, manifest_path, out_dir,
                         seed);
    }
    if (train_cmd->parsed()) {
      return run_train(data_dir, config_path, out_dir, ablate);
    }
    if (evaluate_cmd->parsed()) {
      return run_evaluate(checkpoint_path, data_dir, baseline, json_out,
                          csv_out);
    }
    if (recommend_cmd->parsed()) {
      return run_recommend(checkpoint_path, history_path, dow, hour_bin, k);
    }
    if (analyze_cmd->parsed()) {
      return run_analyze(checkpoint_path, mode, device, control, dow,
                         hour_bin, history_path, out_dir);
    }
    if (synth_cmd->parsed()) {
      return run_synth(spec_path, out_dir);
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ParseError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
