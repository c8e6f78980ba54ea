#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "freqlens/data.hpp"
#include "freqlens/model.hpp"

namespace freqlens {

/// Non-finite loss or gradient during training.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LossWeights {
  double lambda_div = 0.01;
  double lambda_recon = 0.1;
  double lambda_sparse = 0.01;
  double lambda_variance = 0.1;  // accepted for completeness; no term uses it
  double epsilon_div = 1e-6;

  void validate() const;
};

/// Log-barrier on consecutive gaps of the sorted log-frequencies.
Tensor diversity_loss(const Tensor& frequencies, double epsilon = 1e-6);

/// Mean squared deviation of the row cosine-similarity matrix from identity.
Tensor orthogonality_loss(const Tensor& features);

struct LossBreakdown {
  Tensor total;
  double pred = 0, div = 0, recon = 0, sparse = 0;
};

LossBreakdown total_loss(const ForwardOutput& output, const Tensor& target, const LossWeights& weights,
                         FreqMode mode);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double freq_lr_multiplier = 5.0;
};

/// Adam over a model's trainable parameters; the frequency group gets a scaled step.
class Adam {
 public:
  Adam(ModelState& model, AdamConfig config = {});
  /// Applies one update at base learning rate `lr`. Throws NumericError on a NaN gradient.
  void step(const ad::Gradients& grads, double lr);
  std::size_t steps() const { return t_; }

 private:
  ModelState* model_;
  AdamConfig cfg_;
  std::size_t t_ = 0;
  std::map<std::string, std::vector<double>> m_, v_;
};

struct TrainConfig {
  std::size_t epochs = 50;
  double base_lr = 1e-3;
  double freq_lr_multiplier = 5.0;
  std::size_t batch_size = 32;
  std::size_t patience = 10;
  double tau_start = 1.0;
  double tau_end = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  /// Cap on optimizer steps per epoch; 0 uses every batch.
  std::size_t max_batches_per_epoch = 0;
  std::uint64_t seed = 42;

  void validate() const;
};

struct Schedule {
  double lr = 0.0;
  double tau = 1.0;
};

/// Cosine-annealed learning rate and linearly annealed Gumbel temperature.
Schedule schedule_at(std::size_t epoch, const TrainConfig& config);

/// Patience counter on validation MSE; improvement means strictly lower.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}
  /// Returns true when `val_mse` is a new best.
  bool update(double val_mse);
  bool should_stop() const { return since_best_ >= patience_; }
  double best() const { return best_; }

 private:
  std::size_t patience_;
  std::size_t since_best_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
};

struct EpochRecord {
  std::size_t epoch = 0;
  double pred = 0, div = 0, recon = 0, sparse = 0, total = 0;
  double val_mse = 0;
  double tau = 0, lr = 0;
  std::vector<double> frequencies;

  std::string to_json() const;
};

struct TrainResult {
  ModelState best;
  std::vector<EpochRecord> log;
  std::size_t best_epoch = 0;
  double best_val_mse = 0;
  bool stopped_early = false;
};

/// Mean squared error of y_hat over a window set in evaluation mode.
double evaluate_mse(const ModelState& model, const WindowSet& windows, std::size_t batch_size = 256);

/// Predictions [count, H, C] in evaluation mode, flattened.
std::vector<double> predict(const ModelState& model, const WindowSet& windows, std::size_t batch_size = 256);

using EpochCallback = std::function<void(const EpochRecord&)>;

TrainResult train(ModelState model, const WindowSet& train_set, const WindowSet& val_set, const TrainConfig& config,
                  const LossWeights& weights, const EpochCallback& on_epoch = {});

/// One JSON object per line.
std::string train_log_to_jsonl(const std::vector<EpochRecord>& log);

}  // namespace freqlens
