#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ugdet/synthdata.hpp"
#include "ugdet/trainer.hpp"

namespace ugdet {

inline constexpr int kConfigSchemaVersion = 1;
inline constexpr const char* kMetricsSchema = "ugdet-metrics-v1";
inline constexpr const char* kCheckpointSchema = "ugdet-checkpoint-v1";

// Experiment configuration: data (domain pair + counts), train, eval
// grids, output. Parsed from JSON with unknown keys rejected.
struct RunConfig {
  // data
  std::string preset = "weather";  // weather | scale | camera | synthetic
  DomainConfig source_domain;
  DomainConfig target_domain;
  int source_count = 400;
  int target_count = 400;
  int test_count = 100;
  uint64_t data_seed = 7;

  TrainConfig train;

  // eval
  std::vector<std::pair<double, double>> tau_grid = {
      {0.25, 0.5}, {0.75, 0.5}, {0.5, 0.5}, {0.5, 0.25}, {0.5, 0.75}};
  std::vector<double> threshold_grid = {0.5, 0.6, 0.7, 0.8, 0.9};

  std::string output_dir = "runs/out";
};

// Builds the preset pair of domain configs. The source domain is the
// clean default; the target applies one shift axis.
std::pair<DomainConfig, DomainConfig> domain_preset(const std::string& name,
                                                    int grid, int feat_dim,
                                                    int num_classes);

// Throws std::invalid_argument with a path-anchored message on unknown
// keys, missing schema_version, or invariant violations.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);

// Serializes the effective configuration; round-trips through
// parse_run_config.
std::string dump_run_config(const RunConfig& cfg);

// FNV-1a over the canonicalized (key-sorted) JSON dump.
std::string config_hash(const std::string& json_text);

// metrics.csv: schema comment line, fixed header, one row per
// checkpoint. NaN fields are emitted empty.
void write_metrics_csv(std::ostream& os, const std::vector<MetricRow>& history);

// Run summary with final numbers and the config hash.
void write_run_summary(std::ostream& os, const TrainState& state,
                       const std::string& cfg_hash);

// Checkpoints carry both models plus the config hash.
void write_checkpoint(std::ostream& os, const TrainState& state,
                      const std::string& cfg_hash);
TrainState read_checkpoint(std::istream& is, const DetectorConfig& cfg);

}  // namespace ugdet
