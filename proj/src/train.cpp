#include "freqlens/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "freqlens/rng.hpp"

namespace freqlens {

using namespace ad;
using json = nlohmann::json;

void LossWeights::validate() const {
  if (lambda_div < 0 || lambda_recon < 0 || lambda_sparse < 0 || lambda_variance < 0) {
    throw std::invalid_argument("loss weights must be nonnegative");
  }
  if (!(epsilon_div > 0)) throw std::invalid_argument("epsilon_div must be positive");
}

Tensor diversity_loss(const Tensor& f, double epsilon) {
  if (f.dim() != 1 || f.numel() < 2) throw ShapeError("diversity_loss: need at least two frequencies");
  const std::size_t n = f.numel();
  const Tensor logs = log(argsort_ascending(f).values);
  const Tensor gaps = slice(logs, 0, 1, n) - slice(logs, 0, 0, n - 1);
  return -mean(log(gaps + epsilon));
}

Tensor orthogonality_loss(const Tensor& features) {
  if (features.dim() != 2) throw ShapeError("orthogonality_loss: expected [N, d], got " + to_string(features.shape()));
  const std::size_t n = features.size(0);
  const Tensor norms = sqrt(clamp_min(sum_axis(square(features), 1, true), 1e-16));
  const Tensor unit = features / norms;
  const Tensor gram = matmul(unit, swap_axes(unit, 0, 1));
  std::vector<double> eye(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) eye[i * n + i] = 1.0;
  return mean(square(gram - Tensor({n, n}, eye)));
}

LossBreakdown total_loss(const ForwardOutput& out, const Tensor& target, const LossWeights& w, FreqMode mode) {
  if (out.y_hat.shape() != target.shape()) {
    throw ShapeError("total_loss: prediction " + to_string(out.y_hat.shape()) + " vs target " +
                     to_string(target.shape()));
  }
  LossBreakdown r;
  const Tensor pred = mean(square(out.y_hat - target));
  Tensor div = Tensor::scalar(0.0);
  if (mode == FreqMode::FixedPrior) {
    const Tensor& c = out.coefficients;  // [B, N, d]
    const std::size_t B = c.size(0), N = c.size(1), d = c.size(2);
    div = orthogonality_loss(reshape(swap_axes(c, 0, 1), {N, B * d}));
  } else if (out.frequencies.numel() >= 2) {
    div = diversity_loss(out.frequencies, w.epsilon_div);
  }
  const Tensor sparse = sum(abs(out.soft_weights)) / static_cast<double>(out.soft_weights.size(0));
  r.total = pred + w.lambda_div * div + w.lambda_recon * out.recon_error + w.lambda_sparse * sparse;
  r.pred = pred.item();
  r.div = div.item();
  r.recon = out.recon_error.item();
  r.sparse = sparse.item();
  return r;
}

Adam::Adam(ModelState& model, AdamConfig config) : model_(&model), cfg_(config) {
  for (const auto& p : model.parameters()) {
    if (!p.trainable) continue;
    m_[p.name].assign(p.tensor->numel(), 0.0);
    v_[p.name].assign(p.tensor->numel(), 0.0);
  }
}

void Adam::step(const Gradients& grads, double lr) {
  ++t_;
  const double t = static_cast<double>(t_);
  const double c1 = 1.0 - std::pow(cfg_.beta1, t);
  const double c2 = 1.0 - std::pow(cfg_.beta2, t);
  for (const auto& p : model_->parameters()) {
    if (!p.trainable) continue;
    const Tensor g = grads.of(*p.tensor);
    const auto gv = g.data();
    for (std::size_t i = 0; i < gv.size(); ++i) {
      if (std::isnan(gv[i])) throw NumericError("NaN gradient in parameter '" + p.name + "'");
    }
    auto& m = m_.at(p.name);
    auto& v = v_.at(p.name);
    const double step_lr = p.group == ParamGroup::Frequency ? lr * cfg_.freq_lr_multiplier : lr;
    std::vector<double> x = p.tensor->to_vector();
    for (std::size_t i = 0; i < x.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gv[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gv[i] * gv[i];
      x[i] -= step_lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
    }
    *p.tensor = Tensor(p.tensor->shape(), std::move(x), true);
  }
}

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("epochs must be at least 1");
  if (patience < 1) throw std::invalid_argument("patience must be at least 1");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be at least 1");
  if (!(base_lr >= 0)) throw std::invalid_argument("base_lr must be nonnegative");
  if (!(tau_start > 0) || !(tau_end > 0)) throw std::invalid_argument("temperatures must be positive");
}

Schedule schedule_at(std::size_t epoch, const TrainConfig& c) {
  if (epoch >= c.epochs) throw std::out_of_range("epoch beyond schedule");
  if (c.epochs == 1) return {c.base_lr, c.tau_start};
  const double frac = static_cast<double>(epoch) / static_cast<double>(c.epochs - 1);
  Schedule s;
  s.lr = c.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
  s.tau = c.tau_start + (c.tau_end - c.tau_start) * frac;
  if (epoch == c.epochs - 1) {
    s.lr = 0.0;
    s.tau = c.tau_end;
  }
  return s;
}

bool EarlyStopping::update(double val_mse) {
  if (val_mse < best_) {
    best_ = val_mse;
    since_best_ = 0;
    return true;
  }
  ++since_best_;
  return false;
}

std::string EpochRecord::to_json() const {
  json j = {{"epoch", epoch}, {"L_pred", pred}, {"L_div", div},   {"L_recon", recon},
            {"L_sparse", sparse}, {"total", total}, {"val_mse", val_mse}, {"tau", tau},
            {"lr", lr},         {"frequencies", frequencies}};
  return j.dump();
}

std::string train_log_to_jsonl(const std::vector<EpochRecord>& log) {
  std::string out;
  for (const auto& r : log) out += r.to_json() + "\n";
  return out;
}

std::vector<double> predict(const ModelState& model, const WindowSet& windows, std::size_t batch_size) {
  std::vector<double> out;
  out.reserve(windows.count * windows.horizon * windows.channels);
  for (std::size_t start = 0; start < windows.count; start += batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(windows.count, start + batch_size); ++i) idx.push_back(i);
    const auto [x, y] = windows.batch(idx);
    const auto pred = forward(model, x);
    const auto d = pred.y_hat.data();
    out.insert(out.end(), d.begin(), d.end());
  }
  return out;
}

double evaluate_mse(const ModelState& model, const WindowSet& windows, std::size_t batch_size) {
  const auto pred = predict(model, windows, batch_size);
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - windows.targets[i]) * (pred[i] - windows.targets[i]);
  return s / static_cast<double>(pred.size());
}

namespace {

std::string snapshot(std::size_t epoch, std::size_t batch, const LossBreakdown& l) {
  std::ostringstream s;
  s.precision(17);
  s << "non-finite loss at epoch " << epoch << ", batch " << batch << ": total=" << l.total.item()
    << " pred=" << l.pred << " div=" << l.div << " recon=" << l.recon << " sparse=" << l.sparse;
  return s.str();
}

}  // namespace

TrainResult train(ModelState model, const WindowSet& train_set, const WindowSet& val_set, const TrainConfig& config,
                  const LossWeights& weights, const EpochCallback& on_epoch) {
  config.validate();
  weights.validate();
  if (train_set.count == 0 || val_set.count == 0) throw std::invalid_argument("train and validation sets must be nonempty");

  Rng rng(config.seed);
  Adam adam(model, {config.beta1, config.beta2, 1e-8, config.freq_lr_multiplier});
  TrainResult result;
  result.best = model;
  EarlyStopping stopper(config.patience);

  std::vector<std::size_t> order(train_set.count);
  for (std::size_t e = 0; e < config.epochs; ++e) {
    const Schedule sch = schedule_at(e, config);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    std::size_t n_batches = (order.size() + config.batch_size - 1) / config.batch_size;
    if (config.max_batches_per_epoch > 0) n_batches = std::min(n_batches, config.max_batches_per_epoch);

    EpochRecord rec;
    rec.epoch = e;
    rec.tau = sch.tau;
    rec.lr = sch.lr;
    for (std::size_t b = 0; b < n_batches; ++b) {
      const std::size_t lo = b * config.batch_size;
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), lo + config.batch_size)));
      const auto [x, y] = train_set.batch(idx);
      const auto out = forward(model, x, {sch.tau, true, &rng});
      const auto loss = total_loss(out, y, weights, model.config.freq_mode);
      if (!std::isfinite(loss.total.item())) throw NumericError(snapshot(e, b, loss));
      adam.step(backward(loss.total), sch.lr);
      rec.pred += loss.pred;
      rec.div += loss.div;
      rec.recon += loss.recon;
      rec.sparse += loss.sparse;
      rec.total += loss.total.item();
    }
    const double nb = static_cast<double>(n_batches);
    rec.pred /= nb;
    rec.div /= nb;
    rec.recon /= nb;
    rec.sparse /= nb;
    rec.total /= nb;
    rec.val_mse = evaluate_mse(model, val_set);
    rec.frequencies = compute_frequencies(model.bank).to_vector();
    result.log.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (!std::isfinite(rec.val_mse)) throw NumericError("non-finite validation MSE at epoch " + std::to_string(e));
    if (stopper.update(rec.val_mse)) {
      result.best = model;
      result.best_epoch = e;
    } else if (stopper.should_stop()) {
      result.stopped_early = e + 1 < config.epochs;
      break;
    }
  }
  result.best_val_mse = stopper.best();
  return result;
}

}  // namespace freqlens
