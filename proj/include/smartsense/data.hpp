#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "smartsense/common.hpp"

namespace smartsense {

// One device-control event with its temporal context. control is the label
// space: a control index identifies both the device and the action on it.
struct ActionEvent {
  int device = 0;    // index into the device vocabulary
  int control = 0;   // index into the device-control vocabulary
  int dow = 0;       // day of week, Monday = 0
  int hour_bin = 0;  // three-hour range, 0 = [0,3)
};

struct Session {
  std::string session_id;
  // (timestamp seconds since epoch, event), non-decreasing timestamps.
  std::vector<std::pair<std::int64_t, ActionEvent>> events;
};

// One training window: W-1 input events plus the target context and label.
struct Instance {
  std::vector<ActionEvent> history;
  int target_dow = 0;
  int target_hour_bin = 0;
  int target_control = 0;
};

// Ordered devices sharing one user intention.
struct Routine {
  std::string routine_id;
  std::vector<int> devices;
};

// Bidirectional name maps for devices and (device, control) pairs, plus
// training-frequency counts per control index.
class Vocabulary {
 public:
  int device_index(const std::string& name) const;  // -1 if unknown
  int control_index(const std::string& device, const std::string& control)
      const;  // -1 if unknown
  int add_device(const std::string& name);
  int add_control(const std::string& device, const std::string& control);

  const std::string& device_name(int index) const { return devices_[index]; }
  const std::pair<std::string, std::string>& control_name(int index) const {
    return controls_[index];
  }
  // Device index owning a control index.
  int control_device(int control_index) const {
    return control_devices_[control_index];
  }

  int device_count() const { return static_cast<int>(devices_.size()); }
  int control_count() const { return static_cast<int>(controls_.size()); }

  std::vector<std::int64_t> counts;  // per control index, filled from training

  const std::vector<std::string>& devices() const { return devices_; }
  const std::vector<std::pair<std::string, std::string>>& controls() const {
    return controls_;
  }

 private:
  std::vector<std::string> devices_;
  std::vector<std::pair<std::string, std::string>> controls_;
  std::vector<int> control_devices_;
  std::map<std::string, int> device_index_;
  std::map<std::pair<std::string, std::string>, int> control_index_;
};

struct DatasetManifest {
  int tz_offset_minutes = 0;
  int window_length = 10;
};

DatasetManifest load_manifest(const std::string& path);
void save_manifest(const DatasetManifest& manifest, const std::string& path);

struct LogParseResult {
  std::vector<Session> sessions;
  Vocabulary vocab;
  std::size_t skipped_rows = 0;  // frozen-vocabulary rejections
};

// Reads `session_id,timestamp,device,control` rows. Without a vocabulary the
// vocabulary is built in first-appearance order; with one, rows naming
// unknown devices or controls are skipped and counted. Events are grouped by
// session id and sorted by timestamp. tz_offset_minutes shifts timestamps to
// local time before context binning.
LogParseResult parse_log_csv(const std::string& path,
                             const std::optional<Vocabulary>& vocab,
                             int tz_offset_minutes);

// Local (dow, hour_bin) of a timestamp; Monday = 0, bins of three hours.
std::pair<int, int> bin_timestamp(std::int64_t timestamp_seconds,
                                  int tz_offset_minutes);

// Stride-1 sliding windows of length window over the session. The first
// window-1 events form the history; the last event supplies the target
// context and label. Sessions shorter than window yield nothing.
std::vector<Instance> make_windows(const Session& session, int window);

struct SplitResult {
  std::vector<Instance> train;
  std::vector<Instance> val;
  std::vector<Instance> test;
};

// Seeded uniform shuffle, then cuts at floor(0.7 n) and floor(0.8 n).
SplitResult split_instances(std::vector<Instance> instances,
                            std::uint64_t seed);

// Reads `routine_id,devices` rows with `|`-separated device names. Unknown
// devices are dropped; routines with fewer than two remaining devices are
// discarded.
std::vector<Routine> parse_routines(const std::string& path,
                                    const Vocabulary& vocab);

// Prepared-dataset files written by `prepare` and read by `train`/`evaluate`.
void save_vocabulary(const Vocabulary& vocab, const std::string& path);
Vocabulary load_vocabulary(const std::string& path);
void save_instances(const std::vector<Instance>& instances, int window,
                    const std::string& path);
std::vector<Instance> load_instances(const std::string& path, int* window);
void save_routines(const std::vector<Routine>& routines,
                   const std::string& path);
std::vector<Routine> load_routines(const std::string& path);

}  // namespace smartsense
