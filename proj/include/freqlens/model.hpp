#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "freqlens/rng.hpp"
#include "freqlens/tensor.hpp"

namespace freqlens {

using ad::Tensor;

enum class FreqMode { Learnable, FixedPrior };

/// How the frequency and residual paths are fused. FrequencyOnly pins alpha to 1.
enum class FusionMode { Learned, FrequencyOnly };

std::string to_string(FreqMode mode);
std::string to_string(FusionMode mode);
FreqMode parse_freq_mode(const std::string& s);
FusionMode parse_fusion_mode(const std::string& s);

struct ModelConfig {
  std::size_t input_len = 96;   // L
  std::size_t horizon = 96;     // H
  std::size_t channels = 7;     // C
  std::size_t hidden = 64;      // d
  std::size_t num_bases = 32;   // N
  std::size_t top_k = 8;        // K
  std::size_t scorer_hidden = 32;
  FreqMode freq_mode = FreqMode::Learnable;
  /// Periods in steps; fixed-prior mode only, one per basis.
  std::vector<double> prior_periods;
  FusionMode fusion = FusionMode::Learned;
  std::uint64_t seed = 42;

  double f_min() const { return 1.0 / (10.0 * static_cast<double>(input_len)); }
  static constexpr double f_max = 0.5;

  /// Throws std::invalid_argument on inconsistent settings.
  void validate() const;
};

struct FrequencyBank {
  Tensor theta;  // [N] raw parameters
  Tensor phase;  // [N]
  double f_min = 0.0;
  double f_max = ModelConfig::f_max;
  /// Exact frequencies when the bank is frozen at prior periods.
  std::optional<std::vector<double>> fixed;
};

/// Bias-free two-layer ReLU network: relu(x W1) W2.
struct Mlp {
  Tensor w1;  // [in, hidden]
  Tensor w2;  // [hidden, out]

  Tensor operator()(const Tensor& x) const;
};

enum class ParamGroup { Frequency, Other };

struct ParamRef {
  std::string name;
  Tensor* tensor;
  ParamGroup group;
  bool trainable;
};

struct ParameterCounts {
  std::size_t input_proj = 0;
  std::size_t bank = 0;
  std::size_t scorer = 0;
  std::size_t heads = 0;
  std::size_t residual = 0;
  std::size_t fusion = 0;
  std::size_t total() const { return input_proj + bank + scorer + heads + residual + fusion; }
};

struct ModelState {
  ModelConfig config;
  Tensor input_proj;  // [C, d]
  FrequencyBank bank;
  Mlp scorer;          // d -> scorer_hidden -> 1, shared across bases
  Tensor scorer_bias;  // [N]
  std::vector<Mlp> heads;  // K slots, d -> d -> H*C
  Mlp residual;            // L*C -> d -> H*C
  Tensor fusion_logit;     // scalar w_alpha

  /// Stable, name-ordered view of every parameter tensor.
  std::vector<ParamRef> parameters();
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  ParameterCounts parameter_counts() const;
};

ParameterCounts parameter_counts(const ModelConfig& config);

/// Random initialisation; weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
ModelState init_model(const ModelConfig& config);

FrequencyBank init_frequency_bank(const ModelConfig& config);

/// f_i = f_min + (f_max - f_min) * sigmoid(theta_i), or the frozen prior frequencies.
Tensor compute_frequencies(const FrequencyBank& bank);

struct Bases {
  Tensor raw;         // psi [N, L]
  Tensor normalized;  // psi_bar [N, L], unit rows
  std::vector<bool> degenerate;  // rows whose norm hit the 1e-8 floor
};

Bases build_bases(const Tensor& frequencies, const Tensor& phase, std::size_t length);

struct Projection {
  Tensor coefficients;    // c [B, N, d]
  Tensor reconstruction;  // H_hat [B, L, d]
  std::optional<Tensor> components;  // H_i [B, N, L, d] when requested
};

Projection project(const Tensor& hidden, const Tensor& normalized_bases, bool with_components = false);

struct Selection {
  /// Per-sample basis indices ordered by decreasing soft weight (slot order).
  std::vector<std::vector<std::size_t>> indices;
  Tensor soft_weights;  // alpha_i [B, N]
  Tensor scores;        // s_i [B, N], before noise
};

/// Scores every basis and keeps the top-K per sample. Training adds Gumbel noise.
Selection score_and_select(const ModelState& model, const Tensor& coefficients, double tau, bool training,
                           Rng* rng);

/// One attribution head applied to per-sample coefficients c_f [B, d] -> [B, H, C].
Tensor head_contribution(const ModelState& model, std::size_t slot, const Tensor& coeff);

struct ForwardOptions {
  double tau = 1.0;
  bool training = false;
  Rng* rng = nullptr;  // required when training
};

struct ForwardOutput {
  Tensor y_hat;   // [B, H, C]
  Tensor y_freq;  // [B, H, C]
  Tensor y_res;   // [B, H, C]
  Tensor alpha;   // scalar fusion weight
  Tensor hidden;  // H [B, L, d]
  Tensor coefficients;    // c [B, N, d]
  Tensor reconstruction;  // H_hat [B, L, d]
  Tensor recon_error;     // mean((H_hat - H)^2)
  Tensor soft_weights;    // [B, N]
  Tensor scores;          // [B, N]
  Tensor frequencies;     // [N]
  std::vector<std::vector<std::size_t>> selected;  // [B][K]
  /// contributions[k] is slot k for every sample: [B, H, C].
  std::vector<Tensor> contributions;

  std::size_t batch() const { return selected.size(); }
  /// Contribution of slot k for sample b, flattened [H*C].
  std::vector<double> contribution(std::size_t b, std::size_t k) const;
};

ForwardOutput forward(const ModelState& model, const Tensor& inputs, const ForwardOptions& options = {});

/// Frequency prediction restricted to `subset[b]` (basis indices, each within the
/// sample's selected set), recomputed from the inputs with the selection held fixed.
Tensor masked_forward(const ModelState& model, const Tensor& inputs,
                      const std::vector<std::vector<std::size_t>>& selected,
                      const std::vector<std::vector<std::size_t>>& subset);

/// Same restriction evaluated on stored contributions.
Tensor masked_sum(const ForwardOutput& output, const std::vector<std::vector<std::size_t>>& subset);

struct FrequencyAttribution {
  std::size_t basis = 0;
  std::size_t slot = 0;
  double frequency = 0.0;
  double period_steps = 0.0;
  double soft_weight = 0.0;
  double magnitude = 0.0;  // l2 norm of the contribution
  std::vector<double> contribution;  // [H*C]
};

struct SampleAttribution {
  std::vector<FrequencyAttribution> frequencies;  // slot order
  std::vector<double> y_freq;
  std::vector<double> y_res;
  std::vector<double> y_hat;
};

struct AttributionReport {
  double alpha = 0.0;
  std::size_t horizon = 0;
  std::size_t channels = 0;
  std::vector<SampleAttribution> samples;
};

AttributionReport attribute(const ForwardOutput& output, const ModelConfig& config);

// Checkpoints: versioned JSON with config, seed and every parameter by name.
inline constexpr int kCheckpointVersion = 1;
void save_checkpoint(const ModelState& model, const std::string& path);
ModelState load_checkpoint(const std::string& path);
std::string checkpoint_to_string(const ModelState& model);
ModelState checkpoint_from_string(const std::string& text);

}  // namespace freqlens
