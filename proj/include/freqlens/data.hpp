#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "freqlens/tensor.hpp"

namespace freqlens {

using ad::Tensor;

/// Malformed or unusable input data (bad cells, short segments, constant channels).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SeriesTable {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;  // row-major [rows, cols]
  std::vector<std::string> channels;
  double step_duration = 3600.0;  // seconds per step
  std::size_t dropped_rows = 0;   // rows discarded for NaN cells

  double at(std::size_t t, std::size_t c) const { return values[t * cols + c]; }
  std::vector<double> column(std::size_t c) const;
};

struct CsvOptions {
  /// Leading column skipped when its header matches (case-insensitive).
  std::string timestamp_column = "date";
  /// Keep only these channels, in this order. Empty keeps all.
  std::vector<std::string> columns;
  double step_duration = 3600.0;
};

SeriesTable load_csv(const std::string& path, const CsvOptions& options = {});
SeriesTable parse_csv(const std::string& text, const CsvOptions& options = {});
/// Writes a header and full-precision values; round-trips through load_csv.
void write_csv(const SeriesTable& table, const std::string& path);

struct Segment {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
  std::size_t size() const { return end - begin; }
};

struct Splits {
  Segment train, val, test;
};

struct SplitSpec {
  enum class Mode { Ratio, Months } mode = Mode::Ratio;
  double train = 0.7, val = 0.1, test = 0.2;
  double train_months = 12, val_months = 4, test_months = 4;
};

/// Chronological split. Months map to rows as months * 30 days / step_duration.
Splits split_rows(std::size_t rows, const SplitSpec& spec, double step_duration);

struct NormStats {
  std::vector<double> mean;
  std::vector<double> std;  // population (1/n)
  std::string estimator = "population";
};

NormStats fit_zscore(const SeriesTable& table, const Segment& train);
SeriesTable apply_zscore(const SeriesTable& table, const NormStats& stats);
SeriesTable denormalize(const SeriesTable& table, const NormStats& stats);
/// Fits on `train` rows only and normalizes every row.
std::pair<SeriesTable, NormStats> fit_apply_zscore(const SeriesTable& table, const Segment& train);

/// Stride-1 windows fully inside one segment.
struct WindowSet {
  std::size_t input_len = 0, horizon = 0, channels = 0;
  std::size_t count = 0;
  std::vector<double> inputs;   // [count, L, C]
  std::vector<double> targets;  // [count, H, C]
  std::vector<std::size_t> starts;  // table row of each window's first input

  /// Inputs [B, L, C] and targets [B, H, C] for the given window indices.
  std::pair<Tensor, Tensor> batch(const std::vector<std::size_t>& indices) const;
  std::pair<Tensor, Tensor> all() const;
  /// Population variance of every target element.
  double target_variance() const;
};

WindowSet make_windows(const SeriesTable& table, std::size_t input_len, std::size_t horizon, const Segment& segment);

struct SynthComponent {
  double period = 24.0;  // steps
  double amplitude = 1.0;
  double phase = 0.0;  // radians
};

struct SynthSpec {
  std::vector<SynthComponent> components;
  double slope = 0.0;  // per step
  double noise_std = 0.0;
  std::size_t length = 2000;
  std::uint64_t seed = 0;
  double step_duration = 3600.0;
};

/// x(t) = sum_k a_k cos(2 pi t / P_k + phase_k) + slope t + noise, one channel "x".
SeriesTable synth_series(const SynthSpec& spec);

}  // namespace freqlens
