#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "cloak/attacks.hpp"
#include "cloak/clf/cnn.hpp"
#include "cloak/defenses.hpp"
#include "cloak/synth.hpp"
#include "cloak/trace.hpp"

namespace cloak::exp {

/// Flat `key = value` lines; `#` starts a comment. Duplicate keys are errors.
using KeyValues = std::map<std::string, std::string>;
KeyValues parse_key_values(std::istream& in);
KeyValues parse_key_values(const std::string& text);

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::filesystem::path out = "results";
  int last_stage = 4;  // stages 1..last_stage run

  std::optional<std::filesystem::path> data;  // trace CSV; otherwise generate
  bool export_dataset = true;                 // write dataset.csv in stage 1
  synth::GenConfig gen;                       // seed derived from `seed` unless set
  bool gen_seed_set = false;
  std::size_t per_class = 200;

  std::string family = "cnn";
  clf::CnnConfig cnn;  // input_len and n_classes follow the data
  clf::TrainConfig train;
  std::vector<std::string> baselines;  // extra families reported in accuracy

  std::vector<attack::AttackKind> attacks{attack::kAllAttacks.begin(), attack::kAllAttacks.end()};
  attack::AttackParams attack_params;
  std::size_t attack_samples = 100;

  defense::RetrainConfig retrain;
  std::vector<double> temperatures{defense::kDistillTemperatures.begin(), defense::kDistillTemperatures.end()};
  std::size_t distill_epochs = 0;  // 0: same as train.epochs

  /// Builds a config from parsed keys; unknown keys and bad values throw
  /// ConfigError. Relative paths resolve against `base`.
  static ExperimentConfig from_keys(const KeyValues& kv, const std::filesystem::path& base = {});
  static ExperimentConfig load(const std::filesystem::path& path);
  void validate() const;
};

/// Splits with `seed` and normalizes raw traces on the train split. Traces
/// already in [0, 1] keep identity stats.
Dataset prepare_dataset(Dataset ds, std::uint64_t seed);

using Cell = std::variant<std::monostate, double, std::string>;  // monostate prints as NA

struct Table {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;

  void write_csv(std::ostream& out) const;
  nlohmann::json to_json() const;
  static Table read_csv(std::istream& in, std::string name);
};

/// A numeric cell, NA when v is NaN.
Cell num(double v);

struct StageReport {
  int stage = 0;
  double wall_seconds = 0.0;
  std::vector<std::filesystem::path> artifacts;
  std::map<std::string, double> metrics;
};

struct PipelineResult {
  std::vector<StageReport> stages;
  std::vector<Table> tables;
};

/// Runs stages 1..config.last_stage and writes every artifact and table
/// under config.out. Stage seeds are derive_seed(config.seed, stage).
PipelineResult run_pipeline(const ExperimentConfig& config, std::ostream* log = nullptr);

enum class Format { Csv, Json };

/// Writes `<name>.csv` or `<name>.json` for each table.
std::vector<std::filesystem::path> emit_report(const std::vector<Table>& tables, const std::filesystem::path& dir,
                                               Format format);

/// Accuracy below which a hardened model's attack cells read NA.
inline constexpr double kDegenerateAccuracy = 0.5;

}  // namespace cloak::exp
