#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "smartsense/evaluation.hpp"

namespace smartsense {

// Fires when the previous pattern event's control matches trigger_control and
// the current context lies in the dow/hour sets (empty set = any).
struct PatternRule {
  int trigger_control = 0;
  std::vector<int> dows;
  std::vector<int> hour_bins;
  int next_control = 0;
  double fire_p = 1.0;
};

struct RoutineSpec {
  std::vector<int> devices;
  double trigger_p = 0.0;  // chance the routine opens a session
};

struct SynthSpec {
  int n_devices = 10;
  int n_controls_per_device = 4;
  int n_sessions = 100;
  int session_len = 20;
  int window_length = 10;
  long event_gap_seconds = 900;
  double capricious_p = 0.0;
  std::uint64_t seed = 0;
  std::vector<PatternRule> rules;
  std::vector<RoutineSpec> routines;

  int n_controls() const { return n_devices * n_controls_per_device; }
  int control_device(int control) const {
    return control / n_controls_per_device;
  }

  // Empty when the spec is consistent; otherwise one message per violation.
  std::vector<std::string> validate() const;

  nlohmann::json to_json() const;
  static SynthSpec from_json(const nlohmann::json& j);
};

struct SynthResult {
  std::string log_csv;
  std::string routine_csv;
  // Metric ceiling of the exact conditional-distribution oracle, aggregated
  // over every window target position.
  EvalReport bayes_optimal;
  std::size_t target_positions = 0;
};

// Samples sessions event by event: routine openings, context-conditioned
// rules, uniform base draws, and i.i.d. capricious events from devices
// outside the active rule's device set. The oracle ranks controls by the
// generator's own conditional distribution at each target position.
SynthResult generate(const SynthSpec& spec);

// Writes log.csv, routines.csv, manifest.json and bayes.json under out_dir.
SynthResult write_synth_dataset(const SynthSpec& spec,
                                const std::string& out_dir);

}  // namespace smartsense
