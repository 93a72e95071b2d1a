#include "smartsense/synth.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "smartsense/data.hpp"

namespace smartsense {

using nlohmann::json;

namespace {

// 2024-01-01 00:00 UTC, a Monday, so day-of-week arithmetic starts at 0.
constexpr std::int64_t kBaseTimestamp = 1704067200;

bool in_set(int value, const std::vector<int>& set) {
  if (set.empty()) return true;
  for (const int v : set) {
    if (v == value) return true;
  }
  return false;
}

}  // namespace

std::vector<std::string> SynthSpec::validate() const {
  std::vector<std::string> violations;
  const auto check = [&](bool ok, const std::string& message) {
    if (!ok) violations.push_back(message);
  };
  check(n_devices > 0, "n_devices must be positive");
  check(n_controls_per_device > 0, "n_controls_per_device must be positive");
  check(n_sessions > 0, "n_sessions must be positive");
  check(session_len > 0, "session_len must be positive");
  check(window_length >= 2, "window_length must be at least 2");
  check(session_len >= window_length, "session_len must be >= window_length");
  check(event_gap_seconds > 0, "event_gap_seconds must be positive");
  check(capricious_p >= 0.0 && capricious_p <= 1.0,
        "capricious_p must be in [0, 1]");
  const int controls = n_controls();
  for (std::size_t i = 0; i < rules.size(); ++i) {
    const PatternRule& rule = rules[i];
    const std::string at = "rules[" + std::to_string(i) + "]: ";
    check(rule.trigger_control >= 0 && rule.trigger_control < controls,
          at + "trigger_control out of range");
    check(rule.next_control >= 0 && rule.next_control < controls,
          at + "next_control out of range");
    check(rule.fire_p >= 0.0 && rule.fire_p <= 1.0,
          at + "fire_p must be in [0, 1]");
    for (const int dow : rule.dows) {
      check(dow >= 0 && dow < 7, at + "dow out of range");
    }
    for (const int hour : rule.hour_bins) {
      check(hour >= 0 && hour < 8, at + "hour_bin out of range");
    }
  }
  std::size_t opening_budget = 0;
  for (std::size_t i = 0; i < routines.size(); ++i) {
    const RoutineSpec& routine = routines[i];
    const std::string at = "routines[" + std::to_string(i) + "]: ";
    check(routine.devices.size() >= 2, at + "needs at least 2 devices");
    check(routine.trigger_p >= 0.0 && routine.trigger_p <= 1.0,
          at + "trigger_p must be in [0, 1]");
    for (const int device : routine.devices) {
      check(device >= 0 && device < n_devices, at + "device out of range");
    }
    if (routine.trigger_p > 0.0) opening_budget += routine.devices.size();
  }
  // Routine openings must fit inside the first window's history so that
  // every window target stays a chain position with an exact conditional.
  check(opening_budget <= static_cast<std::size_t>(window_length) - 1,
        "routine openings may span at most window_length - 1 events");
  return violations;
}

json SynthSpec::to_json() const {
  json rules_json = json::array();
  for (const PatternRule& rule : rules) {
    rules_json.push_back({{"trigger_control", rule.trigger_control},
                          {"dows", rule.dows},
                          {"hour_bins", rule.hour_bins},
                          {"next_control", rule.next_control},
                          {"fire_p", rule.fire_p}});
  }
  json routines_json = json::array();
  for (const RoutineSpec& routine : routines) {
    routines_json.push_back(
        {{"devices", routine.devices}, {"trigger_p", routine.trigger_p}});
  }
  return json{{"n_devices", n_devices},
              {"n_controls_per_device", n_controls_per_device},
              {"n_sessions", n_sessions},
              {"session_len", session_len},
              {"window_length", window_length},
              {"event_gap_seconds", event_gap_seconds},
              {"capricious_p", capricious_p},
              {"seed", seed},
              {"rules", rules_json},
              {"routines", routines_json}};
}

SynthSpec SynthSpec::from_json(const json& j) {
  SynthSpec spec;
  const auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("n_devices", spec.n_devices);
  get("n_controls_per_device", spec.n_controls_per_device);
  get("n_sessions", spec.n_sessions);
  get("session_len", spec.session_len);
  get("window_length", spec.window_length);
  get("event_gap_seconds", spec.event_gap_seconds);
  get("capricious_p", spec.capricious_p);
  get("seed", spec.seed);
  if (j.contains("rules")) {
    for (const json& r : j.at("rules")) {
      PatternRule rule;
      rule.trigger_control = r.at("trigger_control").get<int>();
      rule.next_control = r.at("next_control").get<int>();
      rule.fire_p = r.at("fire_p").get<double>();
      if (r.contains("dows")) rule.dows = r.at("dows").get<std::vector<int>>();
      if (r.contains("hour_bins")) {
        rule.hour_bins = r.at("hour_bins").get<std::vector<int>>();
      }
      spec.rules.push_back(std::move(rule));
    }
  }
  if (j.contains("routines")) {
    for (const json& r : j.at("routines")) {
      RoutineSpec routine;
      routine.devices = r.at("devices").get<std::vector<int>>();
      routine.trigger_p = r.at("trigger_p").get<double>();
      spec.routines.push_back(std::move(routine));
    }
  }
  return spec;
}

namespace {

// Generator state while sampling one session.
struct ChainState {
  int last_pattern_control = -1;  // -1 before any pattern event
};

const PatternRule* match_rule(const SynthSpec& spec, const ChainState& state,
                              int dow, int hour_bin) {
  if (state.last_pattern_control < 0) return nullptr;
  for (const PatternRule& rule : spec.rules) {
    if (rule.trigger_control == state.last_pattern_control &&
        in_set(dow, rule.dows) && in_set(hour_bin, rule.hour_bins)) {
      return &rule;
    }
  }
  return nullptr;
}

// Controls eligible for a capricious draw: devices outside the active rule's
// device set (or outside the current chain device when no rule is active).
std::vector<int> capricious_pool(const SynthSpec& spec, const ChainState& state,
                                 const PatternRule* rule) {
  std::vector<bool> excluded(spec.n_devices, false);
  if (rule != nullptr) {
    excluded[spec.control_device(rule->trigger_control)] = true;
    excluded[spec.control_device(rule->next_control)] = true;
  } else if (state.last_pattern_control >= 0) {
    excluded[spec.control_device(state.last_pattern_control)] = true;
  }
  std::vector<int> pool;
  pool.reserve(spec.n_controls());
  for (int c = 0; c < spec.n_controls(); ++c) {
    if (!excluded[spec.control_device(c)]) pool.push_back(c);
  }
  if (pool.empty()) {
    for (int c = 0; c < spec.n_controls(); ++c) pool.push_back(c);
  }
  return pool;
}

// Exact conditional distribution of the next emitted control given the
// generator's state and the current context.
Vector true_distribution(const SynthSpec& spec, const ChainState& state,
                         const PatternRule* rule,
                         const std::vector<int>& pool) {
  const int n = spec.n_controls();
  Vector p = Vector::Zero(n);
  const double u_all = 1.0 / static_cast<double>(n);
  const double pattern_mass = 1.0 - spec.capricious_p;
  if (rule != nullptr) {
    p.array() += pattern_mass * (1.0 - rule->fire_p) * u_all;
    p(rule->next_control) += pattern_mass * rule->fire_p;
  } else {
    p.array() += pattern_mass * u_all;
  }
  const double u_pool = spec.capricious_p / static_cast<double>(pool.size());
  for (const int c : pool) p(c) += u_pool;
  return p;
}

}  // namespace

SynthResult generate(const SynthSpec& spec) {
  const std::vector<std::string> violations = spec.validate();
  if (!violations.empty()) {
    std::string message = "invalid synth spec:";
    for (const std::string& v : violations) message += "\n  - " + v;
    throw UsageError(message);
  }

  Rng rng(spec.seed);
  std::ostringstream log;
  log << "session_id,timestamp,device,control\n";

  double map1 = 0, map3 = 0, map5 = 0, hr1 = 0, hr3 = 0, hr5 = 0;
  std::size_t targets = 0;

  for (int s = 0; s < spec.n_sessions; ++s) {
    const std::int64_t start =
        kBaseTimestamp +
        static_cast<std::int64_t>(next_below(rng, 7 * 24 * 60)) * 60;
    ChainState state;
    int emitted = 0;

    // Routine openings: each triggered routine contributes one control per
    // device, in order, before the chain takes over.
    std::vector<int> opening;
    for (const RoutineSpec& routine : spec.routines) {
      if (next_double(rng) < routine.trigger_p) {
        for (const int device : routine.devices) {
          opening.push_back(device * spec.n_controls_per_device);
        }
      }
    }

    while (emitted < spec.session_len) {
      const std::int64_t timestamp =
          start + static_cast<std::int64_t>(emitted) * spec.event_gap_seconds;
      const auto [dow, hour_bin] = bin_timestamp(timestamp, 0);

      int control;
      if (emitted < static_cast<int>(opening.size())) {
        control = opening[emitted];
        state.last_pattern_control = control;
      } else {
        const PatternRule* rule = match_rule(spec, state, dow, hour_bin);
        const std::vector<int> pool = capricious_pool(spec, state, rule);
        // Positions with a full history window are the targets the pipeline
        // will extract; the oracle scores them by the true conditional.
        const bool is_target = emitted >= spec.window_length - 1;
        Vector p;
        if (is_target) p = true_distribution(spec, state, rule, pool);

        if (next_double(rng) < spec.capricious_p) {
          control = pool[next_below(rng, pool.size())];
          // Capricious events do not advance the intention chain.
        } else if (rule != nullptr && next_double(rng) < rule->fire_p) {
          control = rule->next_control;
          state.last_pattern_control = control;
        } else {
          control = static_cast<int>(next_below(rng, spec.n_controls()));
          state.last_pattern_control = control;
        }

        if (is_target) {
          const int rank = rank_of_target(p, control);
          map1 += map_at_k(rank, 1);
          map3 += map_at_k(rank, 3);
          map5 += map_at_k(rank, 5);
          hr1 += hr_at_k(rank, 1);
          hr3 += hr_at_k(rank, 3);
          hr5 += hr_at_k(rank, 5);
          ++targets;
        }
      }

      log << 's' << s << ',' << timestamp << ",dev"
          << spec.control_device(control) << ",c"
          << control % spec.n_controls_per_device << "\n";
      ++emitted;
    }
  }

  SynthResult result;
  result.log_csv = log.str();

  std::ostringstream routines;
  routines << "routine_id,devices\n";
  for (std::size_t i = 0; i < spec.routines.size(); ++i) {
    routines << 'r' << i << ',';
    const std::vector<int>& devices = spec.routines[i].devices;
    for (std::size_t j = 0; j < devices.size(); ++j) {
      if (j > 0) routines << '|';
      routines << "dev" << devices[j];
    }
    routines << "\n";
  }
  result.routine_csv = routines.str();

  result.target_positions = targets;
  result.bayes_optimal.model = "bayes_optimal";
  result.bayes_optimal.instances = targets;
  if (targets > 0) {
    const double n = static_cast<double>(targets);
    result.bayes_optimal.map1 = map1 / n;
    result.bayes_optimal.map3 = map3 / n;
    result.bayes_optimal.map5 = map5 / n;
    result.bayes_optimal.hr1 = hr1 / n;
    result.bayes_optimal.hr3 = hr3 / n;
    result.bayes_optimal.hr5 = hr5 / n;
  }
  return result;
}

SynthResult write_synth_dataset(const SynthSpec& spec,
                                const std::string& out_dir) {
  SynthResult result = generate(spec);
  std::filesystem::create_directories(out_dir);
  const std::filesystem::path dir(out_dir);

  std::ofstream(dir / "log.csv") << result.log_csv;
  std::ofstream(dir / "routines.csv") << result.routine_csv;

  DatasetManifest manifest;
  manifest.tz_offset_minutes = 0;
  manifest.window_length = spec.window_length;
  save_manifest(manifest, (dir / "manifest.json").string());

  json bayes{{"spec", spec.to_json()},
             {"target_positions", result.target_positions},
             {"bayes_optimal",
              {{"map1", result.bayes_optimal.map1},
               {"map3", result.bayes_optimal.map3},
               {"map5", result.bayes_optimal.map5},
               {"hr1", result.bayes_optimal.hr1},
               {"hr3", result.bayes_optimal.hr3},
               {"hr5", result.bayes_optimal.hr5}}}};
  std::ofstream(dir / "bayes.json") << bayes.dump(2) << "\n";
  return result;
}

}  // namespace smartsense
