#include "smartsense/data.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace smartsense {
namespace {

using nlohmann::json;

std::vector<std::string> split_line(const std::string& line, char sep) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream stream(line);
  while (std::getline(stream, field, sep)) {
    fields.push_back(field);
  }
  if (!line.empty() && line.back() == sep) fields.emplace_back();
  return fields;
}

std::string strip(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

[[noreturn]] void fail_row(const std::string& path, std::size_t line_number,
                           const std::string& why) {
  throw ParseError(path + ":" + std::to_string(line_number) + ": " + why);
}

std::ifstream open_or_throw(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path + ": cannot open file");
  return in;
}

// Floor division/modulo for timestamps that may predate the epoch.
std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

std::int64_t floor_mod(std::int64_t a, std::int64_t b) {
  return a - floor_div(a, b) * b;
}

json vocab_to_json(const Vocabulary& vocab) {
  json controls = json::array();
  for (const auto& [device, control] : vocab.controls()) {
    controls.push_back({device, control});
  }
  return json{{"devices", vocab.devices()},
              {"controls", controls},
              {"counts", vocab.counts}};
}

Vocabulary vocab_from_json(const json& j) {
  Vocabulary vocab;
  for (const auto& name : j.at("devices")) {
    vocab.add_device(name.get<std::string>());
  }
  for (const auto& pair : j.at("controls")) {
    vocab.add_control(pair.at(0).get<std::string>(),
                      pair.at(1).get<std::string>());
  }
  if (j.contains("counts")) {
    vocab.counts = j.at("counts").get<std::vector<std::int64_t>>();
  }
  return vocab;
}

}  // namespace

int Vocabulary::device_index(const std::string& name) const {
  const auto it = device_index_.find(name);
  return it == device_index_.end() ? -1 : it->second;
}

int Vocabulary::control_index(const std::string& device,
                              const std::string& control) const {
  const auto it = control_index_.find({device, control});
  return it == control_index_.end() ? -1 : it->second;
}

int Vocabulary::add_device(const std::string& name) {
  const auto it = device_index_.find(name);
  if (it != device_index_.end()) return it->second;
  const int index = static_cast<int>(devices_.size());
  devices_.push_back(name);
  device_index_.emplace(name, index);
  return index;
}

int Vocabulary::add_control(const std::string& device,
                            const std::string& control) {
  const auto key = std::make_pair(device, control);
  const auto it = control_index_.find(key);
  if (it != control_index_.end()) return it->second;
  const int index = static_cast<int>(controls_.size());
  controls_.push_back(key);
  control_devices_.push_back(add_device(device));
  control_index_.emplace(key, index);
  return index;
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in = open_or_throw(path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  DatasetManifest manifest;
  manifest.tz_offset_minutes = j.at("tz_offset_minutes").get<int>();
  manifest.window_length = j.at("window_length").get<int>();
  if (manifest.window_length < 2) {
    throw ParseError(path + ": window_length must be at least 2");
  }
  return manifest;
}

void save_manifest(const DatasetManifest& manifest, const std::string& path) {
  std::ofstream out(path);
  out << json{{"tz_offset_minutes", manifest.tz_offset_minutes},
              {"window_length", manifest.window_length}}
             .dump(2)
      << "\n";
}

std::pair<int, int> bin_timestamp(std::int64_t timestamp_seconds,
                                  int tz_offset_minutes) {
  const std::int64_t local =
      timestamp_seconds + static_cast<std::int64_t>(tz_offset_minutes) * 60;
  const std::int64_t days = floor_div(local, 86400);
  // The epoch fell on a Thursday; shift so Monday maps to 0.
  const int dow = static_cast<int>(floor_mod(days + 3, 7));
  const int hour = static_cast<int>(floor_mod(local, 86400) / 3600);
  return {dow, hour / 3};
}

LogParseResult parse_log_csv(const std::string& path,
                             const std::optional<Vocabulary>& vocab,
                             int tz_offset_minutes) {
  std::ifstream in = open_or_throw(path);
  LogParseResult result;
  const bool frozen = vocab.has_value();
  if (frozen) result.vocab = *vocab;

  std::string line;
  std::size_t line_number = 0;
  bool saw_header = false;
  std::map<std::string, std::size_t> session_slot;

  while (std::getline(in, line)) {
    ++line_number;
    const std::string trimmed = strip(line);
    if (trimmed.empty()) continue;
    if (!saw_header) {
      if (trimmed != "session_id,timestamp,device,control") {
        fail_row(path, line_number,
                 "expected header 'session_id,timestamp,device,control'");
      }
      saw_header = true;
      continue;
    }
    const auto fields = split_line(trimmed, ',');
    if (fields.size() != 4) {
      fail_row(path, line_number, "expected 4 fields, got " +
                                      std::to_string(fields.size()));
    }
    const std::string session_id = strip(fields[0]);
    const std::string device = strip(fields[2]);
    const std::string control = strip(fields[3]);
    if (session_id.empty() || device.empty() || control.empty()) {
      fail_row(path, line_number, "empty field");
    }
    std::int64_t timestamp = 0;
    try {
      std::size_t used = 0;
      timestamp = std::stoll(strip(fields[1]), &used);
      if (used != strip(fields[1]).size()) throw std::invalid_argument("");
    } catch (const std::exception&) {
      fail_row(path, line_number, "bad timestamp '" + fields[1] + "'");
    }

    int device_id;
    int control_id;
    if (frozen) {
      device_id = result.vocab.device_index(device);
      control_id = result.vocab.control_index(device, control);
      if (device_id < 0 || control_id < 0) {
        ++result.skipped_rows;
        continue;
      }
    } else {
      device_id = result.vocab.add_device(device);
      control_id = result.vocab.add_control(device, control);
    }

    const auto [dow, hour_bin] = bin_timestamp(timestamp, tz_offset_minutes);
    ActionEvent event{device_id, control_id, dow, hour_bin};

    auto it = session_slot.find(session_id);
    if (it == session_slot.end()) {
      it = session_slot.emplace(session_id, result.sessions.size()).first;
      result.sessions.push_back(Session{session_id, {}});
    }
    result.sessions[it->second].events.emplace_back(timestamp, event);
  }

  for (Session& session : result.sessions) {
    std::stable_sort(session.events.begin(), session.events.end(),
                     [](const auto& a, const auto& b) {
                       return a.first < b.first;
                     });
  }
  return result;
}

std::vector<Instance> make_windows(const Session& session, int window) {
  if (window < 2) throw UsageError("make_windows: window must be at least 2");
  std::vector<Instance> instances;
  const std::size_t len = session.events.size();
  if (len < static_cast<std::size_t>(window)) return instances;
  instances.reserve(len - window + 1);
  for (std::size_t start = 0; start + window <= len; ++start) {
    Instance instance;
    instance.history.reserve(window - 1);
    for (int i = 0; i < window - 1; ++i) {
      instance.history.push_back(session.events[start + i].second);
    }
    const ActionEvent& last = session.events[start + window - 1].second;
    instance.target_dow = last.dow;
    instance.target_hour_bin = last.hour_bin;
    instance.target_control = last.control;
    instances.push_back(std::move(instance));
  }
  return instances;
}

SplitResult split_instances(std::vector<Instance> instances,
                            std::uint64_t seed) {
  Rng rng(seed);
  shuffle(instances, rng);
  const std::size_t n = instances.size();
  const std::size_t train_end = 7 * n / 10;
  const std::size_t val_end = 8 * n / 10;
  SplitResult split;
  split.train.assign(instances.begin(), instances.begin() + train_end);
  split.val.assign(instances.begin() + train_end,
                   instances.begin() + val_end);
  split.test.assign(instances.begin() + val_end, instances.end());
  return split;
}

std::vector<Routine> parse_routines(const std::string& path,
                                    const Vocabulary& vocab) {
  std::ifstream in = open_or_throw(path);
  std::vector<Routine> routines;
  std::string line;
  std::size_t line_number = 0;
  bool saw_header = false;
  while (std::getline(in, line)) {
    ++line_number;
    const std::string trimmed = strip(line);
    if (trimmed.empty()) continue;
    if (!saw_header) {
      if (trimmed != "routine_id,devices") {
        fail_row(path, line_number, "expected header 'routine_id,devices'");
      }
      saw_header = true;
      continue;
    }
    const auto fields = split_line(trimmed, ',');
    if (fields.size() != 2) {
      fail_row(path, line_number, "expected 2 fields, got " +
                                      std::to_string(fields.size()));
    }
    Routine routine;
    routine.routine_id = strip(fields[0]);
    if (routine.routine_id.empty()) fail_row(path, line_number, "empty id");
    for (const std::string& name : split_line(fields[1], '|')) {
      const std::string device = strip(name);
      if (device.empty()) fail_row(path, line_number, "empty device name");
      const int index = vocab.device_index(device);
      if (index >= 0) routine.devices.push_back(index);
    }
    if (routine.devices.size() >= 2) routines.push_back(std::move(routine));
  }
  return routines;
}

void save_vocabulary(const Vocabulary& vocab, const std::string& path) {
  std::ofstream out(path);
  out << vocab_to_json(vocab).dump(2) << "\n";
}

Vocabulary load_vocabulary(const std::string& path) {
  std::ifstream in = open_or_throw(path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  return vocab_from_json(j);
}

void save_instances(const std::vector<Instance>& instances, int window,
                    const std::string& path) {
  std::ofstream out(path);
  out << "window," << window << "\n";
  for (const Instance& instance : instances) {
    for (const ActionEvent& event : instance.history) {
      out << event.device << ' ' << event.control << ' ' << event.dow << ' '
          << event.hour_bin << ',';
    }
    out << instance.target_dow << ',' << instance.target_hour_bin << ','
        << instance.target_control << "\n";
  }
}

std::vector<Instance> load_instances(const std::string& path, int* window) {
  std::ifstream in = open_or_throw(path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ": empty file");
  const auto head = split_line(strip(line), ',');
  if (head.size() != 2 || head[0] != "window") {
    throw ParseError(path + ":1: expected 'window,<W>' header");
  }
  const int w = std::stoi(head[1]);
  if (window != nullptr) *window = w;

  std::vector<Instance> instances;
  std::size_t line_number = 1;
  while (std::getline(in, line)) {
    ++line_number;
    const std::string trimmed = strip(line);
    if (trimmed.empty()) continue;
    const auto fields = split_line(trimmed, ',');
    if (fields.size() != static_cast<std::size_t>(w) + 2) {
      fail_row(path, line_number, "wrong field count");
    }
    Instance instance;
    instance.history.reserve(w - 1);
    for (int i = 0; i < w - 1; ++i) {
      std::istringstream event_stream(fields[i]);
      ActionEvent event;
      if (!(event_stream >> event.device >> event.control >> event.dow >>
            event.hour_bin)) {
        fail_row(path, line_number, "bad event '" + fields[i] + "'");
      }
      instance.history.push_back(event);
    }
    try {
      instance.target_dow = std::stoi(fields[w - 1]);
      instance.target_hour_bin = std::stoi(fields[w]);
      instance.target_control = std::stoi(fields[w + 1]);
    } catch (const std::exception&) {
      fail_row(path, line_number, "bad target fields");
    }
    instances.push_back(std::move(instance));
  }
  return instances;
}

void save_routines(const std::vector<Routine>& routines,
                   const std::string& path) {
  std::ofstream out(path);
  out << "routine_id,devices\n";
  for (const Routine& routine : routines) {
    out << routine.routine_id << ',';
    for (std::size_t i = 0; i < routine.devices.size(); ++i) {
      if (i > 0) out << '|';
      out << routine.devices[i];
    }
    out << "\n";
  }
}

std::vector<Routine> load_routines(const std::string& path) {
  std::ifstream in = open_or_throw(path);
  std::vector<Routine> routines;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    const std::string trimmed = strip(line);
    if (trimmed.empty() || line_number == 1) continue;
    const auto fields = split_line(trimmed, ',');
    if (fields.size() != 2) fail_row(path, line_number, "expected 2 fields");
    Routine routine;
    routine.routine_id = fields[0];
    for (const std::string& token : split_line(fields[1], '|')) {
      try {
        routine.devices.push_back(std::stoi(token));
      } catch (const std::exception&) {
        fail_row(path, line_number, "bad device index '" + token + "'");
      }
    }
    routines.push_back(std::move(routine));
  }
  return routines;
}

}  // namespace smartsense
