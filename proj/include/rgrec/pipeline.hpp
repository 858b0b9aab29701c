#pragma once

#include <map>
#include <string>
#include <vector>

#include "rgrec/common.hpp"

namespace rgrec {

// Resolved pipeline configuration: defaults, then `key = value` lines from
// the config file, then command-line overrides (overrides win). Unknown
// keys are rejected.
class PipelineConfig {
 public:
  static PipelineConfig defaults();
  static PipelineConfig from_file(const std::string& path);

  void set(const std::string& key, const std::string& value);
  void apply_override(const std::string& assignment);  // "key=value"

  const std::string& str(const std::string& key) const;
  std::int64_t integer(const std::string& key) const;
  double real(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::uint64_t seed() const { return static_cast<std::uint64_t>(integer("seed")); }
  int threads() const { return static_cast<int>(integer("threads")); }
  std::string workspace() const { return str("workspace"); }

  void validate() const;
  std::string serialize() const;  // deterministic key = value dump
  const std::map<std::string, std::string>& values() const { return values_; }

  bool force = false;  // rebuild artifacts even when fresh

 private:
  std::map<std::string, std::string> values_;
};

struct StageResult {
  std::vector<std::string> artifacts;
  bool cached = false;
};

inline const std::vector<std::string> kStageNames = {
    "ingest", "mine", "embed", "score-rules", "pretrain", "train", "evaluate"};

// Runs one pipeline stage (recursively ensuring its upstream stages).
// Artifacts carry a stamp with the hash of their inputs: a rerun with
// unchanged inputs is a no-op, a content-hash mismatch (artifact edited or
// corrupted) raises a stale-artifact DataError.
StageResult run_stage(const std::string& stage, const PipelineConfig& cfg);

inline const std::vector<std::string> kAblationModes = {
    "rule-length", "rule-count", "filter-strategy", "no-pretrain", "cold-start"};

// Sweeps one knob across the settings of the chosen mode, running the full
// pipeline per setting in a sub-workspace, and writes a per-setting metric
// table to `ablation_<mode>.tsv` under the base workspace.
std::string run_ablation(const std::string& mode, const PipelineConfig& base);

std::uint64_t file_content_hash(const std::string& path);

}  // namespace rgrec
