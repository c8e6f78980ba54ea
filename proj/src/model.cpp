#include "freqlens/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace freqlens {

using namespace ad;
using json = nlohmann::json;

std::string to_string(FreqMode mode) { return mode == FreqMode::Learnable ? "learnable" : "fixed-prior"; }
std::string to_string(FusionMode mode) { return mode == FusionMode::Learned ? "learned" : "frequency-only"; }

FreqMode parse_freq_mode(const std::string& s) {
  if (s == "learnable") return FreqMode::Learnable;
  if (s == "fixed-prior") return FreqMode::FixedPrior;
  throw std::invalid_argument("unknown freq_mode '" + s + "' (expected learnable or fixed-prior)");
}

FusionMode parse_fusion_mode(const std::string& s) {
  if (s == "learned") return FusionMode::Learned;
  if (s == "frequency-only") return FusionMode::FrequencyOnly;
  throw std::invalid_argument("unknown fusion '" + s + "' (expected learned or frequency-only)");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("model config: " + msg); };
  if (input_len < 2) fail("input_len must be >= 2");
  if (horizon < 1) fail("horizon must be >= 1");
  if (channels < 1) fail("channels must be >= 1");
  if (hidden < 1) fail("hidden must be >= 1");
  if (scorer_hidden < 1) fail("scorer_hidden must be >= 1");
  if (num_bases < 1) fail("num_bases must be >= 1");
  if (top_k < 1 || top_k > num_bases) fail("top_k must satisfy 1 <= top_k <= num_bases");
  if (freq_mode == FreqMode::FixedPrior) {
    if (prior_periods.size() != num_bases) {
      fail("fixed-prior mode needs one prior period per basis (" + std::to_string(num_bases) + "), got " +
           std::to_string(prior_periods.size()));
    }
    for (double p : prior_periods) {
      if (!(p > 2.0)) fail("prior period " + std::to_string(p) + " is at or above Nyquist (must exceed 2 steps)");
      if (!(1.0 / p > f_min())) fail("prior period " + std::to_string(p) + " exceeds the maximum period 10*L");
    }
  }
}

// ---------------------------------------------------------------------------
// Parameters

Tensor Mlp::operator()(const Tensor& x) const { return matmul(relu(matmul(x, w1)), w2); }

std::vector<ParamRef> ModelState::parameters() {
  const bool learnable = config.freq_mode == FreqMode::Learnable;
  std::vector<ParamRef> out;
  out.push_back({"input_proj", &input_proj, ParamGroup::Other, true});
  out.push_back({"bank.theta", &bank.theta, ParamGroup::Frequency, learnable});
  out.push_back({"bank.phase", &bank.phase, ParamGroup::Frequency, learnable});
  out.push_back({"scorer.w1", &scorer.w1, ParamGroup::Other, true});
  out.push_back({"scorer.w2", &scorer.w2, ParamGroup::Other, true});
  out.push_back({"scorer.bias", &scorer_bias, ParamGroup::Other, true});
  for (std::size_t k = 0; k < heads.size(); ++k) {
    out.push_back({"heads." + std::to_string(k) + ".w1", &heads[k].w1, ParamGroup::Other, true});
    out.push_back({"heads." + std::to_string(k) + ".w2", &heads[k].w2, ParamGroup::Other, true});
  }
  out.push_back({"residual.w1", &residual.w1, ParamGroup::Other, true});
  out.push_back({"residual.w2", &residual.w2, ParamGroup::Other, true});
  out.push_back({"fusion.logit", &fusion_logit, ParamGroup::Other, true});
  return out;
}

std::vector<std::pair<std::string, Tensor>> ModelState::named_parameters() const {
  auto refs = const_cast<ModelState*>(this)->parameters();
  std::vector<std::pair<std::string, Tensor>> out;
  out.reserve(refs.size());
  for (const auto& r : refs) out.emplace_back(r.name, *r.tensor);
  return out;
}

ParameterCounts parameter_counts(const ModelConfig& c) {
  ParameterCounts p;
  const std::size_t out = c.horizon * c.channels;
  p.input_proj = c.channels * c.hidden;
  p.bank = 2 * c.num_bases;
  p.scorer = c.hidden * c.scorer_hidden + c.scorer_hidden + c.num_bases;
  p.heads = c.top_k * (c.hidden * c.hidden + c.hidden * out);
  p.residual = c.input_len * c.channels * c.hidden + c.hidden * out;
  p.fusion = 1;
  return p;
}

ParameterCounts ModelState::parameter_counts() const {
  ParameterCounts p;
  p.input_proj = input_proj.numel();
  p.bank = bank.theta.numel() + bank.phase.numel();
  p.scorer = scorer.w1.numel() + scorer.w2.numel() + scorer_bias.numel();
  for (const auto& h : heads) p.heads += h.w1.numel() + h.w2.numel();
  p.residual = residual.w1.numel() + residual.w2.numel();
  p.fusion = fusion_logit.numel();
  return p;
}

namespace {

Tensor uniform_weight(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> v(fan_in * fan_out);
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor({fan_in, fan_out}, std::move(v), true);
}

Mlp make_mlp(Rng& rng, std::size_t in, std::size_t hidden, std::size_t out) {
  Mlp m;
  m.w1 = uniform_weight(rng, in, hidden);
  m.w2 = uniform_weight(rng, hidden, out);
  return m;
}

double logit(double p) {
  // Keeps theta finite for targets at the range endpoints (f = f_max maps to ~34.5).
  p = std::clamp(p, 1e-15, 1.0 - 1e-15);
  return std::log(p / (1.0 - p));
}

}  // namespace

FrequencyBank init_frequency_bank(const ModelConfig& config) {
  const std::size_t n = config.num_bases;
  FrequencyBank bank;
  bank.f_min = config.f_min();
  bank.f_max = ModelConfig::f_max;
  const bool learnable = config.freq_mode == FreqMode::Learnable;

  std::vector<double> targets(n);
  if (learnable) {
    const double lo = std::log(1.0 / static_cast<double>(config.input_len));
    const double hi = std::log(ModelConfig::f_max);
    for (std::size_t i = 0; i < n; ++i) {
      const double u = n == 1 ? 0.5 : static_cast<double>(i) / static_cast<double>(n - 1);
      targets[i] = std::exp(lo + u * (hi - lo));
    }
    // Endpoints exactly, free of exp/log roundoff.
    targets.front() = n == 1 ? targets.front() : 1.0 / static_cast<double>(config.input_len);
    if (n > 1) targets.back() = ModelConfig::f_max;
  } else {
    std::vector<double> fixed(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double p = config.prior_periods.at(i);
      if (!(p > 2.0)) throw std::invalid_argument("prior period " + std::to_string(p) + " is at or above Nyquist");
      fixed[i] = 1.0 / p;
    }
    targets = fixed;
    bank.fixed = std::move(fixed);
  }

  std::vector<double> theta(n);
  for (std::size_t i = 0; i < n; ++i) theta[i] = logit((targets[i] - bank.f_min) / (bank.f_max - bank.f_min));
  bank.theta = Tensor({n}, std::move(theta), learnable);
  bank.phase = Tensor({n}, std::vector<double>(n, 0.0), learnable);
  return bank;
}

ModelState init_model(const ModelConfig& config) {
  config.validate();
  Rng rng(config.seed);
  ModelState m;
  m.config = config;
  const std::size_t out = config.horizon * config.channels;
  m.input_proj = uniform_weight(rng, config.channels, config.hidden);
  m.bank = init_frequency_bank(config);
  m.scorer = make_mlp(rng, config.hidden, config.scorer_hidden, 1);
  m.scorer_bias = Tensor({config.num_bases}, std::vector<double>(config.num_bases, 0.0), true);
  for (std::size_t k = 0; k < config.top_k; ++k) m.heads.push_back(make_mlp(rng, config.hidden, config.hidden, out));
  m.residual = make_mlp(rng, config.input_len * config.channels, config.hidden, out);
  m.fusion_logit = Tensor::scalar(0.0, true);
  return m;
}

// ---------------------------------------------------------------------------
// Frequency decomposition

Tensor compute_frequencies(const FrequencyBank& bank) {
  if (bank.fixed) return Tensor({bank.fixed->size()}, *bank.fixed);
  Tensor f = bank.f_min + (bank.f_max - bank.f_min) * sigmoid(bank.theta);
  // sigmoid saturates to exactly 0 or 1 in double precision for |theta| > ~37;
  // nudge such values one ulp inside the open interval.
  std::vector<double> nudge(f.numel(), 0.0);
  bool any = false;
  for (std::size_t i = 0; i < f.numel(); ++i) {
    if (f[i] <= bank.f_min) {
      nudge[i] = std::nextafter(bank.f_min, bank.f_max) - f[i];
      any = true;
    } else if (f[i] >= bank.f_max) {
      nudge[i] = std::nextafter(bank.f_max, bank.f_min) - f[i];
      any = true;
    }
  }
  if (any) f = f + Tensor(f.shape(), std::move(nudge));
  return f;
}

Bases build_bases(const Tensor& frequencies, const Tensor& phase, std::size_t length) {
  if (length < 1) throw std::invalid_argument("build_bases: length must be >= 1");
  if (frequencies.dim() != 1 || phase.shape() != frequencies.shape()) {
    throw ShapeError("build_bases: frequencies " + to_string(frequencies.shape()) + " and phase " +
                     to_string(phase.shape()) + " must be matching vectors");
  }
  const std::size_t n = frequencies.numel();
  std::vector<double> t(length);
  std::iota(t.begin(), t.end(), 0.0);
  const Tensor steps({1, length}, std::move(t));
  const Tensor angle =
      (2.0 * std::numbers::pi) * reshape(frequencies, {n, 1}) * steps + reshape(phase, {n, 1});

  Bases b;
  b.raw = cos(angle);
  const Tensor sumsq = sum_axis(square(b.raw), 1, true);
  b.normalized = b.raw / sqrt(clamp_min(sumsq, 1e-16));
  b.degenerate.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    b.degenerate[i] = sumsq[i] < 1e-16;
    if (b.degenerate[i]) {
      std::cerr << "warning: basis " << i << " has norm below 1e-8 (f=" << frequencies[i] << ", phase=" << phase[i]
                << "); normalising with the floor\n";
    }
  }
  return b;
}

Projection project(const Tensor& hidden, const Tensor& normalized_bases, bool with_components) {
  if (hidden.dim() != 3 || normalized_bases.dim() != 2 || hidden.size(1) != normalized_bases.size(1)) {
    throw ShapeError("project: hidden " + to_string(hidden.shape()) + " does not conform to bases " +
                     to_string(normalized_bases.shape()));
  }
  Projection p;
  p.coefficients = matmul(normalized_bases, hidden);  // [B, N, d]
  p.reconstruction = matmul(swap_axes(normalized_bases, 0, 1), p.coefficients);
  if (with_components) {
    const std::size_t B = hidden.size(0), L = hidden.size(1), d = hidden.size(2), N = normalized_bases.size(0);
    p.components = reshape(p.coefficients, {B, N, 1, d}) * reshape(normalized_bases, {N, L, 1});
  }
  return p;
}

// ---------------------------------------------------------------------------
// Selection and heads

Selection score_and_select(const ModelState& model, const Tensor& coefficients, double tau, bool training,
                           Rng* rng) {
  if (!(tau > 0.0)) throw std::invalid_argument("score_and_select: tau must be positive");
  const std::size_t B = coefficients.size(0);
  const std::size_t N = coefficients.size(1);
  const std::size_t K = model.config.top_k;
  if (K > N) throw std::invalid_argument("score_and_select: top_k exceeds number of bases");

  Selection sel;
  sel.scores = reshape(model.scorer(coefficients), {B, N}) + model.scorer_bias;
  Tensor logits = sel.scores;
  if (training) {
    if (rng == nullptr) throw std::invalid_argument("score_and_select: training mode needs an rng");
    std::vector<double> noise(B * N);
    for (auto& g : noise) g = rng->gumbel();
    logits = logits + Tensor({B, N}, std::move(noise));
  }
  sel.soft_weights = softmax(logits / tau);

  // Top-K on the perturbed logits: same order as the soft weights, immune to
  // softmax underflow ties. Equal logits fall back to the lower index.
  const auto lv = logits.data();
  sel.indices.assign(B, {});
  std::vector<std::size_t> order(N);
  for (std::size_t b = 0; b < B; ++b) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    const double* row = lv.data() + b * N;
    std::stable_sort(order.begin(), order.end(), [row](std::size_t x, std::size_t y) { return row[x] > row[y]; });
    sel.indices[b].assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(K));
  }
  return sel;
}

Tensor head_contribution(const ModelState& model, std::size_t slot, const Tensor& coeff) {
  if (slot >= model.heads.size()) throw std::out_of_range("head_contribution: slot out of range");
  const std::size_t B = coeff.size(0);
  return reshape(model.heads[slot](coeff), {B, model.config.horizon, model.config.channels});
}

// ---------------------------------------------------------------------------
// Forward pass

namespace {

void check_inputs(const ModelConfig& c, const Tensor& x) {
  if (x.dim() != 3 || x.size(1) != c.input_len || x.size(2) != c.channels) {
    throw ShapeError("forward: expected inputs [B," + std::to_string(c.input_len) + "," +
                     std::to_string(c.channels) + "], got " + to_string(x.shape()));
  }
}

std::vector<std::vector<std::size_t>> slot_rows(const std::vector<std::vector<std::size_t>>& selected, std::size_t k) {
  std::vector<std::vector<std::size_t>> rows(selected.size());
  for (std::size_t b = 0; b < selected.size(); ++b) rows[b] = {selected[b][k]};
  return rows;
}

struct Decomposition {
  Tensor hidden;
  Tensor frequencies;
  Projection projection;
};

Decomposition decompose(const ModelState& model, const Tensor& inputs) {
  Decomposition d;
  d.hidden = matmul(inputs, model.input_proj);
  d.frequencies = compute_frequencies(model.bank);
  const Bases bases = build_bases(d.frequencies, model.bank.phase, model.config.input_len);
  d.projection = project(d.hidden, bases.normalized);
  return d;
}

}  // namespace

std::vector<double> ForwardOutput::contribution(std::size_t b, std::size_t k) const {
  const Tensor& c = contributions.at(k);
  const std::size_t width = c.numel() / c.size(0);
  const auto v = c.data();
  return {v.begin() + static_cast<std::ptrdiff_t>(b * width), v.begin() + static_cast<std::ptrdiff_t>((b + 1) * width)};
}

ForwardOutput forward(const ModelState& model, const Tensor& inputs, const ForwardOptions& options) {
  const ModelConfig& cfg = model.config;
  check_inputs(cfg, inputs);
  const std::size_t B = inputs.size(0);

  ForwardOutput out;
  Decomposition dec = decompose(model, inputs);
  out.hidden = dec.hidden;
  out.frequencies = dec.frequencies;
  out.coefficients = dec.projection.coefficients;
  out.reconstruction = dec.projection.reconstruction;
  out.recon_error = mean(square(out.reconstruction - out.hidden));

  Selection sel = score_and_select(model, out.coefficients, options.tau, options.training, options.rng);
  out.selected = std::move(sel.indices);
  out.soft_weights = sel.soft_weights;
  out.scores = sel.scores;

  const Tensor weights3 = reshape(out.soft_weights, {B, cfg.num_bases, 1});
  for (std::size_t k = 0; k < cfg.top_k; ++k) {
    const auto rows = slot_rows(out.selected, k);
    const Tensor coeff = reshape(gather_rows(out.coefficients, rows), {B, cfg.hidden});
    Tensor contrib = head_contribution(model, k, coeff);
    if (options.training) {
      // Straight-through multiplier: value exactly 1, gradient d(alpha_f).
      const Tensor a = gather_rows(weights3, rows);  // [B, 1, 1]
      contrib = contrib * (1.0 + (a - stop_gradient(a)));
    }
    out.y_freq = k == 0 ? contrib : out.y_freq + contrib;
    out.contributions.push_back(std::move(contrib));
  }

  out.y_res = reshape(model.residual(reshape(inputs, {B, cfg.input_len * cfg.channels})),
                      {B, cfg.horizon, cfg.channels});
  if (cfg.fusion == FusionMode::Learned) {
    out.alpha = sigmoid(model.fusion_logit);
    out.y_hat = out.alpha * out.y_freq + (1.0 - out.alpha) * out.y_res;
  } else {
    out.alpha = Tensor::scalar(1.0);
    out.y_hat = out.y_freq;
  }
  return out;
}

namespace {

void check_subset(const std::vector<std::vector<std::size_t>>& selected,
                  const std::vector<std::vector<std::size_t>>& subset) {
  if (subset.size() != selected.size()) {
    throw std::invalid_argument("masked_forward: subset has " + std::to_string(subset.size()) +
                                " rows for a batch of " + std::to_string(selected.size()));
  }
  for (std::size_t b = 0; b < subset.size(); ++b) {
    for (auto f : subset[b]) {
      if (std::find(selected[b].begin(), selected[b].end(), f) == selected[b].end()) {
        throw std::invalid_argument("masked_forward: basis " + std::to_string(f) + " is not selected for sample " +
                                    std::to_string(b));
      }
    }
  }
}

// Sums slot outputs in slot order, the same order forward() uses for y_freq.
template <class SlotValues>
Tensor sum_slots(std::size_t batch, std::size_t width, const Shape& shape,
                 const std::vector<std::vector<std::size_t>>& selected,
                 const std::vector<std::vector<std::size_t>>& subset, SlotValues slot_values) {
  std::vector<double> acc(batch * width, 0.0);
  std::vector<bool> started(batch, false);
  const std::size_t K = selected.empty() ? 0 : selected[0].size();
  for (std::size_t k = 0; k < K; ++k) {
    bool needed = false;
    for (std::size_t b = 0; b < batch && !needed; ++b)
      needed = std::find(subset[b].begin(), subset[b].end(), selected[b][k]) != subset[b].end();
    if (!needed) continue;
    const Tensor values = slot_values(k);
    const auto v = values.data();
    for (std::size_t b = 0; b < batch; ++b) {
      if (std::find(subset[b].begin(), subset[b].end(), selected[b][k]) == subset[b].end()) continue;
      double* dst = acc.data() + b * width;
      const double* src = v.data() + b * width;
      if (!started[b]) {
        std::copy_n(src, width, dst);
        started[b] = true;
      } else {
        for (std::size_t e = 0; e < width; ++e) dst[e] += src[e];
      }
    }
  }
  return Tensor(shape, std::move(acc));
}

}  // namespace

Tensor masked_forward(const ModelState& model, const Tensor& inputs,
                      const std::vector<std::vector<std::size_t>>& selected,
                      const std::vector<std::vector<std::size_t>>& subset) {
  const ModelConfig& cfg = model.config;
  check_inputs(cfg, inputs);
  const std::size_t B = inputs.size(0);
  if (selected.size() != B) throw std::invalid_argument("masked_forward: selection does not match batch");
  check_subset(selected, subset);
  const Decomposition dec = decompose(model, inputs);
  const Tensor c = stop_gradient(dec.projection.coefficients);
  return sum_slots(B, cfg.horizon * cfg.channels, {B, cfg.horizon, cfg.channels}, selected, subset,
                   [&](std::size_t k) {
                     const Tensor coeff = reshape(gather_rows(c, slot_rows(selected, k)), {B, cfg.hidden});
                     return head_contribution(model, k, coeff);
                   });
}

Tensor masked_sum(const ForwardOutput& output, const std::vector<std::vector<std::size_t>>& subset) {
  check_subset(output.selected, subset);
  const Tensor& first = output.contributions.at(0);
  const std::size_t B = first.size(0);
  return sum_slots(B, first.numel() / B, first.shape(), output.selected, subset,
                   [&](std::size_t k) { return output.contributions[k]; });
}

// ---------------------------------------------------------------------------
// Attribution

AttributionReport attribute(const ForwardOutput& output, const ModelConfig& config) {
  AttributionReport report;
  report.alpha = output.alpha.item();
  report.horizon = config.horizon;
  report.channels = config.channels;
  const std::size_t B = output.batch();
  const std::size_t width = config.horizon * config.channels;
  const std::size_t N = output.frequencies.numel();
  auto row = [width](const Tensor& t, std::size_t b) {
    const auto v = t.data();
    return std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(b * width),
                               v.begin() + static_cast<std::ptrdiff_t>((b + 1) * width));
  };
  for (std::size_t b = 0; b < B; ++b) {
    SampleAttribution s;
    for (std::size_t k = 0; k < output.selected[b].size(); ++k) {
      FrequencyAttribution fa;
      fa.basis = output.selected[b][k];
      fa.slot = k;
      fa.frequency = output.frequencies[fa.basis];
      fa.period_steps = 1.0 / fa.frequency;
      fa.soft_weight = output.soft_weights[b * N + fa.basis];
      fa.contribution = output.contribution(b, k);
      double sq = 0.0;
      for (double v : fa.contribution) sq += v * v;
      fa.magnitude = std::sqrt(sq);
      s.frequencies.push_back(std::move(fa));
    }
    s.y_freq = row(output.y_freq, b);
    s.y_res = row(output.y_res, b);
    s.y_hat = row(output.y_hat, b);
    report.samples.push_back(std::move(s));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

json config_to_json(const ModelConfig& c) {
  return {{"input_len", c.input_len},     {"horizon", c.horizon},
          {"channels", c.channels},       {"hidden", c.hidden},
          {"num_bases", c.num_bases},     {"top_k", c.top_k},
          {"scorer_hidden", c.scorer_hidden}, {"freq_mode", to_string(c.freq_mode)},
          {"prior_periods", c.prior_periods}, {"fusion", to_string(c.fusion)},
          {"seed", c.seed}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.input_len = j.at("input_len").get<std::size_t>();
  c.horizon = j.at("horizon").get<std::size_t>();
  c.channels = j.at("channels").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.num_bases = j.at("num_bases").get<std::size_t>();
  c.top_k = j.at("top_k").get<std::size_t>();
  c.scorer_hidden = j.at("scorer_hidden").get<std::size_t>();
  c.freq_mode = parse_freq_mode(j.at("freq_mode").get<std::string>());
  c.prior_periods = j.at("prior_periods").get<std::vector<double>>();
  c.fusion = parse_fusion_mode(j.at("fusion").get<std::string>());
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

}  // namespace

std::string checkpoint_to_string(const ModelState& model) {
  json params = json::object();
  for (const auto& [name, t] : model.named_parameters()) {
    for (double v : t.data()) {
      if (!std::isfinite(v)) throw std::runtime_error("checkpoint: parameter " + name + " is not finite");
    }
    params[name] = {{"shape", t.shape()}, {"data", t.to_vector()}};
  }
  json j = {{"format", "freqlens-checkpoint"},
            {"version", kCheckpointVersion},
            {"config", config_to_json(model.config)},
            {"seed", model.config.seed},
            {"parameters", params}};
  return j.dump();
}

ModelState checkpoint_from_string(const std::string& text) {
  const json j = json::parse(text);
  if (j.value("format", "") != "freqlens-checkpoint") throw std::runtime_error("checkpoint: unrecognised format");
  const int version = j.at("version").get<int>();
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }
  ModelState m = init_model(config_from_json(j.at("config")));
  const json& params = j.at("parameters");
  for (auto& ref : m.parameters()) {
    if (!params.contains(ref.name)) throw std::runtime_error("checkpoint: missing parameter " + ref.name);
    const json& p = params.at(ref.name);
    auto shape = p.at("shape").get<Shape>();
    if (shape != ref.tensor->shape()) {
      throw std::runtime_error("checkpoint: parameter " + ref.name + " has shape " + to_string(shape) + ", expected " +
                               to_string(ref.tensor->shape()));
    }
    *ref.tensor = Tensor(std::move(shape), p.at("data").get<std::vector<double>>(), ref.tensor->requires_grad());
  }
  return m;
}

void save_checkpoint(const ModelState& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot write " + path);
  os << checkpoint_to_string(model) << '\n';
}

ModelState load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot read " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return checkpoint_from_string(ss.str());
}

}  // namespace freqlens
