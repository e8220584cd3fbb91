#pragma once

// Flat key/value run configuration with one section per module. Files are
// plain text: `[section]` headers, `key = value` lines, `#` comments. Flags
// override file values; the fully resolved config is serialized alongside
// every run's outputs.

#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include "csta/dataio.hpp"
#include "csta/model.hpp"
#include "csta/shots.hpp"
#include "csta/trainer.hpp"

namespace csta {

class IniMap {
 public:
  static IniMap parse_text(const std::string& text);
  static IniMap parse_file(const std::string& path);

  std::optional<std::string> get(const std::string& dotted_key) const;
  void set(const std::string& dotted_key, const std::string& value);
  std::string serialize() const;  // deterministic ordering

 private:
  std::map<std::string, std::string> values_;  // "section.key" -> value
};

struct RunConfig {
  std::string data_dir;
  std::string out_dir;
  std::uint64_t seed = 0;
  int jobs = 1;

  CstaConfig model;
  TrainConfig train;
  int folds = 5;
  int repeats = 10;

  SyntheticSpec gen;
  double budget_ratio = 0.15;
  KtsOptions kts;           // max_changes 0 -> auto (T/8) at use sites
  std::string checkpoint;

  void apply(const IniMap& ini);  // overlay file values onto defaults
  IniMap to_ini() const;          // resolved snapshot
};

}  // namespace csta
