#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "freqlens/data.hpp"
#include "freqlens/interpret.hpp"
#include "freqlens/model.hpp"
#include "freqlens/train.hpp"

namespace freqlens {

/// Bad flags, config keys or incompatible inputs. Maps to exit code 1.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything a run depends on. Serialized as one flat JSON object; see README for keys.
struct RunConfig {
  // Data: a CSV path, or the synthetic generator when empty.
  std::string data_path;
  std::vector<std::string> columns;
  std::string timestamp_column = "date";
  double step_duration = 3600.0;
  std::vector<double> synth_periods{24, 12};
  std::vector<double> synth_amplitudes{1.0, 0.5};
  std::vector<double> synth_phases{0.0, 0.0};
  double synth_slope = 0.0;
  double synth_noise = 0.1;
  std::size_t synth_length = 2000;
  std::uint64_t synth_seed = 0;

  SplitSpec split;
  ModelConfig model;  // channels are taken from the data
  TrainConfig train;
  LossWeights loss;

  std::map<std::string, double> known_periods{{"daily", 86400.0}, {"half-daily", 43200.0}};  // seconds
  double delta = 0.15;
  std::vector<std::size_t> faithfulness_k{1, 2, 4};
  std::string out_dir = "runs";
  std::vector<std::uint64_t> seeds{42};
};

RunConfig run_config_from_json(const std::string& text);
std::string run_config_to_json(const RunConfig& config);
RunConfig load_run_config(const std::string& path);

/// Normalized data with windows for each split.
struct PreparedData {
  SeriesTable raw;
  SeriesTable normalized;
  NormStats stats;
  Splits splits;
  WindowSet train, val, test;
  const WindowSet& split(const std::string& name) const;
};

SeriesTable load_series(const RunConfig& config);
PreparedData prepare_data(const RunConfig& config);

/// Trains one seed and writes checkpoint.json, train_log.jsonl, loss_curve.csv and
/// norm_stats.json under <out_dir>/seed_<seed>/. Returns the run directory.
std::string train_seed(const RunConfig& config, const PreparedData& data, std::uint64_t seed);

/// Command-line entry point; returns the process exit code.
int run_cli(int argc, char** argv);

}  // namespace freqlens
