#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <sstream>
#include <sys/wait.h>

#include <nlohmann/json.hpp>

#include "smartsense/data.hpp"
#include "test_util.hpp"

using namespace smartsense;
namespace tu = smartsense::testutil;
using nlohmann::json;

namespace {

struct CliResult {
  int exit_code;
  std::string out;
  std::string err;
};

CliResult run_cli(const std::string& args, const std::filesystem::path& dir) {
  const auto out_path = dir / "stdout.txt";
  const auto err_path = dir / "stderr.txt";
  const std::string command = std::string(SMARTSENSE_CLI_PATH) + " " + args +
                              " > " + out_path.string() + " 2> " +
                              err_path.string();
  const int status = std::system(command.c_str());
  CliResult result;
  result.exit_code = WEXITSTATUS(status);
  result.out = tu::read_file(out_path);
  result.err = tu::read_file(err_path);
  return result;
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream stream(text);
  std::string line;
  while (std::getline(stream, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::istringstream ls(line);
    std::string field;
    while (std::getline(ls, field, ',')) fields.push_back(field);
    rows.push_back(std::move(fields));
  }
  return rows;
}

const char* kSynthSpec = R"({
  "n_devices": 5, "n_controls_per_device": 2,
  "n_sessions": 120, "session_len": 14,
  "window_length": 10, "capricious_p": 0.05, "seed": 11,
  "rules": [
    {"trigger_control": 0, "next_control": 3, "fire_p": 0.9},
    {"trigger_control": 3, "next_control": 6, "fire_p": 0.9},
    {"trigger_control": 6, "next_control": 9, "fire_p": 0.9},
    {"trigger_control": 9, "next_control": 0, "fire_p": 0.9}
  ],
  "routines": [{"devices": [0, 1, 2], "trigger_p": 0.3}]
})";

const char* kTrainConfig = R"({
  "d": 12, "layers": 1, "heads": 2, "dropout_p": 0.1,
  "batch_size": 64, "lr": 0.003, "negatives": 2,
  "max_epochs": 2, "patience": 2, "seed": 3
})";

}  // namespace

TEST_CASE("cli end-to-end: synth, prepare, train, evaluate, recommend, "
          "analyze") {
  const auto dir = tu::temp_dir("cli");
  tu::write_file(dir / "spec.json", kSynthSpec);
  tu::write_file(dir / "config.json", kTrainConfig);

  // synth
  auto synth = run_cli("synth --spec " + (dir / "spec.json").string() +
                           " --out " + (dir / "raw").string(),
                       dir);
  REQUIRE(synth.exit_code == 0);
  CHECK(std::filesystem::exists(dir / "raw" / "log.csv"));
  CHECK(std::filesystem::exists(dir / "raw" / "bayes.json"));

  // prepare
  auto prepare = run_cli(
      "prepare --log " + (dir / "raw" / "log.csv").string() + " --routines " +
          (dir / "raw" / "routines.csv").string() + " --manifest " +
          (dir / "raw" / "manifest.json").string() + " --out " +
          (dir / "data").string() + " --seed 1",
      dir);
  REQUIRE(prepare.exit_code == 0);
  CHECK(std::filesystem::exists(dir / "data" / "train.csv"));

  // train
  auto train = run_cli("train --data " + (dir / "data").string() +
                           " --config " + (dir / "config.json").string() +
                           " --out " + (dir / "run").string(),
                       dir);
  REQUIRE(train.exit_code == 0);
  const std::string checkpoint = (dir / "run" / "best.ckpt").string();
  CHECK(std::filesystem::exists(checkpoint));
  CHECK(std::filesystem::exists(dir / "run" / "metrics.csv"));
  const auto metrics = parse_csv(tu::read_file(dir / "run" / "metrics.csv"));
  REQUIRE(metrics.size() >= 2);
  CHECK(metrics[0] ==
        std::vector<std::string>{"epoch", "train_loss", "val_map1",
                                 "seconds"});

  // evaluate: model then pop baseline
  auto evaluate = run_cli("evaluate --checkpoint " + checkpoint + " --data " +
                              (dir / "data").string() + " --json " +
                              (dir / "report.json").string(),
                          dir);
  REQUIRE(evaluate.exit_code == 0);
  auto rows = parse_csv(evaluate.out);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0][0] == "model");
  CHECK(rows[1][0] == "smartsense");
  const double model_map1 = std::stod(rows[1][1]);
  CHECK(model_map1 >= 0.0);
  CHECK(model_map1 <= 1.0);
  const json report = json::parse(tu::read_file(dir / "report.json"));
  CHECK(report.at("model") == "smartsense");

  auto pop = run_cli("evaluate --data " + (dir / "data").string() +
                         " --baseline pop",
                     dir);
  REQUIRE(pop.exit_code == 0);
  CHECK(parse_csv(pop.out)[1][0] == "pop");

  // determinism: the same evaluate twice prints the same bytes
  auto evaluate2 = run_cli("evaluate --checkpoint " + checkpoint + " --data " +
                               (dir / "data").string(),
                           dir);
  auto evaluate3 = run_cli("evaluate --checkpoint " + checkpoint + " --data " +
                               (dir / "data").string(),
                           dir);
  CHECK(evaluate2.out == evaluate3.out);

  // recommend on the first test instance's history
  int window = 0;
  const auto test_instances =
      load_instances((dir / "data" / "test.csv").string(), &window);
  REQUIRE(window == 10);
  REQUIRE_FALSE(test_instances.empty());
  json history = json::array();
  for (const ActionEvent& event : test_instances[0].history) {
    history.push_back({{"device", event.device},
                       {"control", event.control},
                       {"dow", event.dow},
                       {"hour_bin", event.hour_bin}});
  }
  tu::write_file(dir / "history.json", history.dump());
  auto recommend = run_cli(
      "recommend --checkpoint " + checkpoint + " --history " +
          (dir / "history.json").string() + " --dow " +
          std::to_string(test_instances[0].target_dow) + " --hour " +
          std::to_string(test_instances[0].target_hour_bin) + " --k 5",
      dir);
  REQUIRE(recommend.exit_code == 0);
  rows = parse_csv(recommend.out);
  REQUIRE(rows.size() == 5);
  double prev = 2.0;
  for (const auto& row : rows) {
    REQUIRE(row.size() == 2);
    const double p = std::stod(row[1]);
    CHECK(p <= prev + 1e-12);
    CHECK(p >= 0.0);
    CHECK(row[1].find('.') != std::string::npos);
    prev = p;
  }

  // full ranking sums to ~1 at printed precision
  auto full = run_cli("recommend --checkpoint " + checkpoint + " --history " +
                          (dir / "history.json").string() +
                          " --dow 0 --hour 0 --k 10",
                      dir);
  REQUIRE(full.exit_code == 0);
  rows = parse_csv(full.out);
  REQUIRE(rows.size() == 10);
  double sum = 0.0;
  for (const auto& row : rows) sum += std::stod(row[1]);
  CHECK(std::abs(sum - 1.0) < 1e-4);

  // analyze: attention matrix rows sum to 1
  auto attention = run_cli("analyze --checkpoint " + checkpoint +
                               " --mode attention --device dev0 --control c0 "
                               "--dow 0 --hour 0 --out " +
                               (dir / "attention.csv").string(),
                           dir);
  REQUIRE(attention.exit_code == 0);
  rows = parse_csv(tu::read_file(dir / "attention.csv"));
  REQUIRE(rows.size() == 5);
  for (std::size_t r = 1; r < rows.size(); ++r) {
    REQUIRE(rows[r].size() == 5);
    double row_sum = 0.0;
    for (int c = 1; c <= 4; ++c) row_sum += std::stod(rows[r][c]);
    CHECK(row_sum == doctest::Approx(1.0).epsilon(1e-9));
  }

  // analyze: sequence attention weights sum to 1
  auto seq = run_cli("analyze --checkpoint " + checkpoint +
                         " --mode seq-attention --history " +
                         (dir / "history.json").string() +
                         " --dow 1 --hour 2 --out " + (dir / "seq.csv").string(),
                     dir);
  REQUIRE(seq.exit_code == 0);
  rows = parse_csv(tu::read_file(dir / "seq.csv"));
  REQUIRE(rows.size() == 10);  // header + 9 positions
  double alpha_sum = 0.0;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    alpha_sum += std::stod(rows[r][1]);
  }
  CHECK(alpha_sum == doctest::Approx(1.0).epsilon(1e-9));

  // analyze: device similarity is symmetric with unit diagonal
  auto device_sim = run_cli("analyze --checkpoint " + checkpoint +
                                " --mode device-sim --out " +
                                (dir / "device_sim.csv").string(),
                            dir);
  REQUIRE(device_sim.exit_code == 0);
  rows = parse_csv(tu::read_file(dir / "device_sim.csv"));
  REQUIRE(rows.size() == 6);
  for (int i = 1; i <= 5; ++i) {
    CHECK(std::stod(rows[i][i]) == doctest::Approx(1.0));
    for (int j = 1; j <= 5; ++j) {
      CHECK(std::stod(rows[i][j]) ==
            doctest::Approx(std::stod(rows[j][i])).epsilon(1e-9));
    }
  }

  // analyze: hour similarity over circular distances
  auto hour_sim = run_cli("analyze --checkpoint " + checkpoint +
                              " --mode hour-sim --out " +
                              (dir / "hour_sim.csv").string(),
                          dir);
  REQUIRE(hour_sim.exit_code == 0);
  rows = parse_csv(tu::read_file(dir / "hour_sim.csv"));
  REQUIRE(rows.size() == 6);  // header + deltas 0..4
  CHECK(std::stod(rows[1][1]) == doctest::Approx(1.0));
}

TEST_CASE("cli error paths use the documented exit codes") {
  const auto dir = tu::temp_dir("cli_errors");

  // unknown subcommand -> usage error
  CHECK(run_cli("frobnicate", dir).exit_code == 1);

  // missing file -> data error
  CHECK(run_cli("synth --spec /nonexistent.json --out " +
                    (dir / "x").string(),
                dir)
            .exit_code == 2);

  // bad spec content -> usage error (validation)
  tu::write_file(dir / "bad_spec.json", R"({"n_devices": 0})");
  CHECK(run_cli("synth --spec " + (dir / "bad_spec.json").string() +
                    " --out " + (dir / "y").string(),
                dir)
            .exit_code == 1);
}

TEST_CASE("cli rejects a history of the wrong length") {
  const auto dir = tu::temp_dir("cli_history");
  tu::write_file(dir / "spec.json", kSynthSpec);
  run_cli("synth --spec " + (dir / "spec.json").string() + " --out " +
              (dir / "raw").string(),
          dir);
  run_cli("prepare --log " + (dir / "raw" / "log.csv").string() +
              " --routines " + (dir / "raw" / "routines.csv").string() +
              " --manifest " + (dir / "raw" / "manifest.json").string() +
              " --out " + (dir / "data").string() + " --seed 1",
          dir);
  tu::write_file(dir / "config.json", R"({"d": 12, "layers": 1, "heads": 2,
    "batch_size": 64, "negatives": 2, "max_epochs": 1, "patience": 1,
    "seed": 3})");
  auto train = run_cli("train --data " + (dir / "data").string() +
                           " --config " + (dir / "config.json").string() +
                           " --out " + (dir / "run").string(),
                       dir);
  REQUIRE(train.exit_code == 0);

  json short_history = json::array();
  for (int i = 0; i < 8; ++i) {
    short_history.push_back(
        {{"device", 0}, {"control", 0}, {"dow", 0}, {"hour_bin", 0}});
  }
  tu::write_file(dir / "short.json", short_history.dump());
  auto recommend = run_cli("recommend --checkpoint " +
                               (dir / "run" / "best.ckpt").string() +
                               " --history " + (dir / "short.json").string() +
                               " --dow 0 --hour 0 --k 3",
                           dir);
  CHECK(recommend.exit_code == 1);
  CHECK(recommend.err.find("9") != std::string::npos);

  // k beyond the control count is a usage error
  json ok_history = json::array();
  for (int i = 0; i < 9; ++i) {
    ok_history.push_back(
        {{"device", 0}, {"control", 0}, {"dow", 0}, {"hour_bin", 0}});
  }
  tu::write_file(dir / "ok.json", ok_history.dump());
  auto big_k = run_cli("recommend --checkpoint " +
                           (dir / "run" / "best.ckpt").string() +
                           " --history " + (dir / "ok.json").string() +
                           " --dow 0 --hour 0 --k 999",
                       dir);
  CHECK(big_k.exit_code == 1);
}
