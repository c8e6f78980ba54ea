#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "freqlens/data.hpp"
#include "freqlens/model.hpp"

namespace freqlens {

struct PeriodInfo {
  double frequency = 0;  // cycles per step
  double steps = 0;      // 1 / f
  double physical = 0;   // steps * step_duration (seconds)
};

std::vector<PeriodInfo> periods_from_frequencies(const std::vector<double>& frequencies, double step_duration);

struct KnownPeriod {
  std::string name;
  double period = 0;  // same unit as the learned periods being matched
};

struct PeriodMatch {
  std::string name;
  double known = 0;
  double learned = 0;
  std::size_t learned_index = 0;
  double relative_error = 0;
  bool matched = false;
};

/// Each known period is paired with the learned period of smallest relative error.
std::vector<PeriodMatch> match_known_periods(const std::vector<double>& learned, const std::vector<KnownPeriod>& known,
                                             double delta = 0.15);

/// Periods T/k of the top_k largest local maxima of the amplitude spectrum (k >= 1).
std::vector<double> fft_peak_detection(const std::vector<double>& series, std::size_t top_k);

/// Coalition value for a bitmask over K players.
using Game = std::function<std::vector<double>(std::uint32_t mask)>;

/// Exact Shapley values by enumerating all 2^K coalitions; one vector per player.
std::vector<std::vector<double>> shapley_bruteforce(std::size_t players, const Game& game);
/// Shapley values of the additive game v(T) = sum of contributions in T.
std::vector<std::vector<double>> shapley_bruteforce(const std::vector<std::vector<double>>& contributions);
/// l2 norm of each player's Shapley vector.
std::vector<double> shapley_l2(const std::vector<std::vector<double>>& values);

double pearson(const std::vector<double>& x, const std::vector<double>& y);

struct FaithfulnessResult {
  std::size_t k = 0;
  /// Mean |delta y_hat| after removing each sample's top-k frequencies.
  double mean_change = 0;
  /// Same on the frequency path alone (without the alpha scale).
  double mean_change_freq = 0;
  /// Pearson correlation of ||A(f)|| with single-removal impact ||delta y_hat||.
  double correlation = 0;
  /// Largest | ||delta y_hat(f)|| - alpha ||A(f)|| | over samples and frequencies.
  double max_impact_error = 0;
  std::size_t pairs = 0;
};

std::vector<FaithfulnessResult> faithfulness_test(const ModelState& model, const WindowSet& windows,
                                                  const std::vector<std::size_t>& k_list,
                                                  std::size_t batch_size = 256);

struct AlphaSummary {
  std::vector<double> alphas;
  double mean = 0;
  double std = 0;  // sample std; 0 for a single model
};

AlphaSummary alpha_report(const std::vector<ModelState>& models);
AlphaSummary alpha_summary(const std::vector<double>& alphas);

struct SeedDiscovery {
  std::uint64_t seed = 0;
  std::vector<PeriodInfo> periods;  // sorted by period, ascending
  std::vector<PeriodMatch> matches;
  std::vector<std::size_t> selection_counts;  // per basis index
};

struct KnownSummary {
  std::string name;
  double known = 0;
  std::size_t seeds_matched = 0;
  double mean = 0;  // over matched seeds only
  double std = 0;
};

struct DiscoveryReport {
  double delta = 0.15;
  double step_duration = 3600;
  std::vector<SeedDiscovery> seeds;
  std::vector<KnownSummary> summary;

  std::string to_json() const;
  /// Rows of (seed, basis, period_steps, period_physical, selection_count, matched).
  std::string to_csv() const;
};

/// Known periods are given in physical units (seconds); matching happens in that unit.
DiscoveryReport discover(const std::vector<std::pair<std::uint64_t, ModelState>>& runs, const WindowSet* windows,
                         const std::vector<KnownPeriod>& known, double step_duration, double delta = 0.15);

/// Per-basis count of how often each basis lands in a sample's top-K.
std::vector<std::size_t> selection_counts(const ModelState& model, const WindowSet& windows,
                                          std::size_t batch_size = 256);

struct AxiomCheck {
  std::string name;
  bool passed = false;
  double max_deviation = 0;  // 0 for bit-exact checks that pass
  std::string detail;
};

struct AxiomReport {
  std::vector<AxiomCheck> checks;  // A1, A2, A3, A4, Shapley
  bool all_passed() const;
  std::string to_json() const;
};

/// Checks completeness, faithfulness, null player, symmetry and the Shapley oracle on
/// inputs X [B, L, C]. Tolerance applies to A1, A2 and Shapley; A3 and A4 are bit-exact.
AxiomReport verify_axioms(const ModelState& model, const Tensor& inputs, double tolerance = 1e-9);

std::string faithfulness_to_json(const std::vector<FaithfulnessResult>& results);
std::string attribution_to_json(const AttributionReport& report);

}  // namespace freqlens
