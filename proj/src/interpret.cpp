#include "freqlens/interpret.hpp"

#include <fftw3.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace freqlens {

using json = nlohmann::json;

std::vector<PeriodInfo> periods_from_frequencies(const std::vector<double>& f, double step_duration) {
  std::vector<PeriodInfo> out;
  out.reserve(f.size());
  for (double v : f) {
    if (!(v > 0)) throw std::invalid_argument("periods_from_frequencies: frequency must be positive");
    out.push_back({v, 1.0 / v, step_duration / v});
  }
  return out;
}

std::vector<PeriodMatch> match_known_periods(const std::vector<double>& learned, const std::vector<KnownPeriod>& known,
                                             double delta) {
  if (known.empty()) throw std::invalid_argument("match_known_periods: known table is empty");
  std::vector<PeriodMatch> out;
  for (const auto& k : known) {
    if (!(k.period > 0)) throw std::invalid_argument("known period '" + k.name + "' must be positive");
    PeriodMatch m;
    m.name = k.name;
    m.known = k.period;
    m.relative_error = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < learned.size(); ++i) {
      const double err = std::abs(learned[i] - k.period) / k.period;
      if (err < m.relative_error) {
        m.relative_error = err;
        m.learned = learned[i];
        m.learned_index = i;
      }
    }
    m.matched = m.relative_error < delta;
    out.push_back(m);
  }
  return out;
}

std::vector<double> fft_peak_detection(const std::vector<double>& series, std::size_t top_k) {
  const std::size_t T = series.size();
  if (T < 4) throw std::invalid_argument("fft_peak_detection: need at least 4 samples");
  const double mean = std::accumulate(series.begin(), series.end(), 0.0) / static_cast<double>(T);
  double scale = 0;
  for (double v : series) scale = std::max(scale, std::abs(v));

  std::vector<double> in(T);
  for (std::size_t t = 0; t < T; ++t) in[t] = series[t] - mean;
  const std::size_t bins = T / 2 + 1;
  fftw_complex* out = fftw_alloc_complex(bins);
  fftw_plan plan = fftw_plan_dft_r2c_1d(static_cast<int>(T), in.data(), out, FFTW_ESTIMATE);
  fftw_execute(plan);
  std::vector<double> amp(bins);
  for (std::size_t k = 0; k < bins; ++k) amp[k] = std::hypot(out[k][0], out[k][1]);
  fftw_destroy_plan(plan);
  fftw_free(out);

  // Amplitudes at roundoff level (e.g. a constant series) are not peaks.
  const double floor = 1e-12 * static_cast<double>(T) * std::max(scale, 1e-300);
  std::vector<std::size_t> peaks;
  for (std::size_t k = 1; k < bins; ++k) {
    if (amp[k] <= floor) continue;
    const bool left = amp[k] > amp[k - 1];
    const bool right = k + 1 < bins ? amp[k] > amp[k + 1] : true;
    if (left && right) peaks.push_back(k);
  }
  std::stable_sort(peaks.begin(), peaks.end(), [&](std::size_t a, std::size_t b) { return amp[a] > amp[b]; });
  if (peaks.size() > top_k) peaks.resize(top_k);
  std::vector<double> periods;
  for (auto k : peaks) periods.push_back(static_cast<double>(T) / static_cast<double>(k));
  return periods;
}

std::vector<std::vector<double>> shapley_bruteforce(std::size_t K, const Game& game) {
  if (K > 12) throw std::invalid_argument("shapley_bruteforce: K > 12 is out of scope for exact enumeration");
  if (K == 0) return {};
  const std::uint32_t full = 1u << K;
  std::vector<std::vector<double>> value(full);
  for (std::uint32_t mask = 0; mask < full; ++mask) value[mask] = game(mask);
  const std::size_t dim = value[0].size();

  std::vector<double> fact(K + 1, 1.0);
  for (std::size_t i = 1; i <= K; ++i) fact[i] = fact[i - 1] * static_cast<double>(i);

  std::vector<std::vector<double>> phi(K, std::vector<double>(dim, 0.0));
  for (std::size_t i = 0; i < K; ++i) {
    const std::uint32_t bit = 1u << i;
    for (std::uint32_t s = 0; s < full; ++s) {
      if (s & bit) continue;
      const auto size = static_cast<std::size_t>(std::popcount(s));
      const double w = fact[size] * fact[K - size - 1] / fact[K];
      const auto& with = value[s | bit];
      const auto& without = value[s];
      for (std::size_t j = 0; j < dim; ++j) phi[i][j] += w * (with[j] - without[j]);
    }
  }
  return phi;
}

std::vector<std::vector<double>> shapley_bruteforce(const std::vector<std::vector<double>>& contributions) {
  const std::size_t K = contributions.size();
  const std::size_t dim = K ? contributions[0].size() : 0;
  for (const auto& c : contributions) {
    if (c.size() != dim) throw std::invalid_argument("shapley_bruteforce: contributions differ in length");
  }
  return shapley_bruteforce(K, [&](std::uint32_t mask) {
    std::vector<double> v(dim, 0.0);
    for (std::size_t i = 0; i < K; ++i)
      if (mask & (1u << i))
        for (std::size_t j = 0; j < dim; ++j) v[j] += contributions[i][j];
    return v;
  });
}

std::vector<double> shapley_l2(const std::vector<std::vector<double>>& values) {
  std::vector<double> out;
  for (const auto& v : values) {
    double s = 0;
    for (double x : v) s += x * x;
    out.push_back(std::sqrt(s));
  }
  return out;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("pearson: need two equal-length samples");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0 || syy == 0) return std::numeric_limits<double>::quiet_NaN();
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

namespace {

double row_norm(const Tensor& t, std::size_t b, std::size_t width) {
  double s = 0;
  for (std::size_t j = 0; j < width; ++j) s += t[b * width + j] * t[b * width + j];
  return std::sqrt(s);
}

}  // namespace

std::vector<FaithfulnessResult> faithfulness_test(const ModelState& model, const WindowSet& windows,
                                                  const std::vector<std::size_t>& k_list, std::size_t batch_size) {
  const std::size_t K = model.config.top_k;
  const std::size_t width = model.config.horizon * model.config.channels;
  for (auto k : k_list) {
    if (k > K) throw std::invalid_argument("faithfulness_test: k=" + std::to_string(k) + " exceeds top_k");
  }
  std::vector<FaithfulnessResult> results(k_list.size());
  std::vector<double> magnitudes, impacts;
  double max_err = 0;
  std::size_t samples = 0;

  for (std::size_t start = 0; start < windows.count; start += batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(windows.count, start + batch_size); ++i) idx.push_back(i);
    const auto [x, y] = windows.batch(idx);
    const auto out = forward(model, x);
    const double alpha = out.alpha.item();
    const std::size_t B = out.batch();
    samples += B;
    const auto& sel = out.selected;

    std::vector<std::vector<double>> mags(B, std::vector<double>(K));
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t b = 0; b < B; ++b) mags[b][k] = row_norm(out.contributions[k], b, width);

    // Single-frequency removals.
    for (std::size_t k = 0; k < K; ++k) {
      auto subset = sel;
      for (auto& row : subset) row.erase(row.begin() + static_cast<std::ptrdiff_t>(k));
      const Tensor reduced = masked_forward(model, x, sel, subset);
      const Tensor y_hat_reduced = alpha * reduced + (1.0 - alpha) * out.y_res;
      const Tensor change = out.y_hat - y_hat_reduced;
      for (std::size_t b = 0; b < B; ++b) {
        const double impact = row_norm(change, b, width);
        magnitudes.push_back(mags[b][k]);
        impacts.push_back(impact);
        max_err = std::max(max_err, std::abs(impact - alpha * mags[b][k]));
      }
    }

    // Top-k removals ranked by attribution magnitude.
    for (std::size_t r = 0; r < k_list.size(); ++r) {
      std::vector<std::vector<std::size_t>> keep(B);
      for (std::size_t b = 0; b < B; ++b) {
        std::vector<std::size_t> slots(K);
        std::iota(slots.begin(), slots.end(), std::size_t{0});
        std::stable_sort(slots.begin(), slots.end(), [&](auto p, auto q) { return mags[b][p] > mags[b][q]; });
        std::vector<bool> removed(K, false);
        for (std::size_t j = 0; j < k_list[r]; ++j) removed[slots[j]] = true;
        for (std::size_t k = 0; k < K; ++k)
          if (!removed[k]) keep[b].push_back(sel[b][k]);
      }
      const Tensor reduced = masked_forward(model, x, sel, keep);
      const Tensor y_hat_reduced = alpha * reduced + (1.0 - alpha) * out.y_res;
      for (std::size_t i = 0; i < reduced.numel(); ++i) {
        results[r].mean_change += std::abs(out.y_hat[i] - y_hat_reduced[i]);
        results[r].mean_change_freq += std::abs(out.y_freq[i] - reduced[i]);
      }
    }
  }

  const double corr = magnitudes.size() >= 2 ? pearson(magnitudes, impacts) : std::numeric_limits<double>::quiet_NaN();
  for (std::size_t r = 0; r < k_list.size(); ++r) {
    results[r].k = k_list[r];
    results[r].mean_change /= static_cast<double>(samples * width);
    results[r].mean_change_freq /= static_cast<double>(samples * width);
    results[r].correlation = corr;
    results[r].max_impact_error = max_err;
    results[r].pairs = magnitudes.size();
  }
  return results;
}

AlphaSummary alpha_summary(const std::vector<double>& alphas) {
  if (alphas.empty()) throw std::invalid_argument("alpha_report: need at least one model");
  AlphaSummary s;
  s.alphas = alphas;
  const double n = static_cast<double>(alphas.size());
  s.mean = std::accumulate(alphas.begin(), alphas.end(), 0.0) / n;
  if (alphas.size() > 1) {
    double ss = 0;
    for (double a : alphas) ss += (a - s.mean) * (a - s.mean);
    s.std = std::sqrt(ss / (n - 1));
  }
  return s;
}

AlphaSummary alpha_report(const std::vector<ModelState>& models) {
  std::vector<double> a;
  for (const auto& m : models) {
    a.push_back(m.config.fusion == FusionMode::FrequencyOnly ? 1.0 : 1.0 / (1.0 + std::exp(-m.fusion_logit.item())));
  }
  return alpha_summary(a);
}

std::vector<std::size_t> selection_counts(const ModelState& model, const WindowSet& windows, std::size_t batch_size) {
  std::vector<std::size_t> counts(model.config.num_bases, 0);
  for (std::size_t start = 0; start < windows.count; start += batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(windows.count, start + batch_size); ++i) idx.push_back(i);
    const auto out = forward(model, windows.batch(idx).first);
    for (const auto& row : out.selected)
      for (auto f : row) ++counts[f];
  }
  return counts;
}

DiscoveryReport discover(const std::vector<std::pair<std::uint64_t, ModelState>>& runs, const WindowSet* windows,
                         const std::vector<KnownPeriod>& known, double step_duration, double delta) {
  DiscoveryReport rep;
  rep.delta = delta;
  rep.step_duration = step_duration;
  for (const auto& [seed, model] : runs) {
    SeedDiscovery sd;
    sd.seed = seed;
    sd.periods = periods_from_frequencies(compute_frequencies(model.bank).to_vector(), step_duration);
    if (windows) {
      sd.selection_counts = selection_counts(model, *windows);
    }
    // Sort periods ascending, carrying selection counts along.
    std::vector<std::size_t> order(sd.periods.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return sd.periods[a].steps < sd.periods[b].steps; });
    std::vector<PeriodInfo> sorted;
    std::vector<std::size_t> counts;
    for (auto i : order) {
      sorted.push_back(sd.periods[i]);
      if (!sd.selection_counts.empty()) counts.push_back(sd.selection_counts[i]);
    }
    sd.periods = std::move(sorted);
    sd.selection_counts = std::move(counts);
    std::vector<double> physical;
    for (const auto& p : sd.periods) physical.push_back(p.physical);
    sd.matches = match_known_periods(physical, known, delta);
    rep.seeds.push_back(std::move(sd));
  }
  for (std::size_t k = 0; k < known.size(); ++k) {
    KnownSummary s;
    s.name = known[k].name;
    s.known = known[k].period;
    std::vector<double> vals;
    for (const auto& sd : rep.seeds)
      if (sd.matches[k].matched) vals.push_back(sd.matches[k].learned);
    s.seeds_matched = vals.size();
    if (!vals.empty()) {
      const auto a = alpha_summary(vals);
      s.mean = a.mean;
      s.std = a.std;
    }
    rep.summary.push_back(s);
  }
  return rep;
}

std::string DiscoveryReport::to_json() const {
  json j;
  j["delta"] = delta;
  j["step_duration"] = step_duration;
  j["seeds"] = json::array();
  for (const auto& sd : seeds) {
    json s;
    s["seed"] = sd.seed;
    s["periods_steps"] = json::array();
    s["periods_physical"] = json::array();
    for (const auto& p : sd.periods) {
      s["periods_steps"].push_back(p.steps);
      s["periods_physical"].push_back(p.physical);
    }
    s["selection_counts"] = sd.selection_counts;
    s["matches"] = json::array();
    for (const auto& m : sd.matches) {
      s["matches"].push_back({{"name", m.name},
                              {"known", m.known},
                              {"learned", m.learned},
                              {"relative_error", m.relative_error},
                              {"matched", m.matched}});
    }
    j["seeds"].push_back(s);
  }
  j["summary"] = json::array();
  for (const auto& s : summary) {
    j["summary"].push_back({{"name", s.name},
                            {"known", s.known},
                            {"seeds_matched", s.seeds_matched},
                            {"mean", s.mean},
                            {"std", s.std}});
  }
  return j.dump(2);
}

std::string DiscoveryReport::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "seed,rank,period_steps,period_physical,selection_count,matched\n";
  for (const auto& sd : seeds) {
    for (std::size_t i = 0; i < sd.periods.size(); ++i) {
      bool matched = false;
      for (const auto& m : sd.matches) matched |= m.matched && m.learned == sd.periods[i].physical;
      out << sd.seed << ',' << i << ',' << sd.periods[i].steps << ',' << sd.periods[i].physical << ','
          << (sd.selection_counts.empty() ? 0 : sd.selection_counts[i]) << ',' << (matched ? 1 : 0) << '\n';
    }
  }
  return out.str();
}

bool AxiomReport::all_passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const AxiomCheck& c) { return c.passed; });
}

std::string AxiomReport::to_json() const {
  json j = json::array();
  for (const auto& c : checks) {
    j.push_back({{"axiom", c.name}, {"passed", c.passed}, {"max_deviation", c.max_deviation}, {"detail", c.detail}});
  }
  return j.dump(2);
}

namespace {

double max_dev(const Tensor& a, const Tensor& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

AxiomReport verify_axioms(const ModelState& model, const Tensor& inputs, double tol) {
  AxiomReport rep;
  const auto out = forward(model, inputs);
  const std::size_t K = model.config.top_k, B = out.batch(), d = model.config.hidden;
  const auto& sel = out.selected;

  // A1: contributions sum to the frequency prediction.
  Tensor total = out.contributions[0];
  for (std::size_t k = 1; k < K; ++k) total = total + out.contributions[k];
  const double a1 = std::max(max_dev(total, out.y_freq), max_dev(masked_forward(model, inputs, sel, sel), out.y_freq));
  rep.checks.push_back({"A1 completeness", a1 <= tol, a1, "sum of K contributions vs y_freq"});

  // A2: removing a frequency changes y_freq by exactly its contribution.
  double a2 = 0;
  for (std::size_t k = 0; k < K; ++k) {
    auto subset = sel;
    for (auto& row : subset) row.erase(row.begin() + static_cast<std::ptrdiff_t>(k));
    a2 = std::max(a2, max_dev(out.y_freq - masked_forward(model, inputs, sel, subset), out.contributions[k]));
  }
  rep.checks.push_back({"A2 faithfulness", a2 <= tol, a2, "y_freq minus masked prediction vs contribution"});

  // A3: a zeroed coefficient contributes exactly zero in every slot.
  double a3 = 0;
  const Tensor zeros = Tensor::zeros({B, d});
  for (std::size_t k = 0; k < K; ++k) {
    const Tensor z = head_contribution(model, k, zeros);
    for (double v : z.data()) a3 = std::max(a3, std::abs(v));
  }
  rep.checks.push_back({"A3 null player", a3 == 0.0, a3, "zero coefficients through every head"});

  // A4: identical coefficients through cloned heads give identical contributions.
  bool a4 = true;
  double a4_dev = 0;
  if (K >= 2) {
    ModelState clone = model;
    const Tensor c = slice(out.coefficients, 1, 0, 1);  // first basis of each sample
    const Tensor cf = reshape(c, {B, d});
    for (std::size_t k = 1; k < K; ++k) {
      clone.heads[k] = clone.heads[0];
      const Tensor a = head_contribution(clone, 0, cf);
      const Tensor b = head_contribution(clone, k, cf);
      a4 = a4 && a.to_vector() == b.to_vector();
      a4_dev = std::max(a4_dev, max_dev(a, b));
    }
  }
  rep.checks.push_back({"A4 symmetry", a4, a4_dev, "cloned heads on identical coefficients"});

  // Shapley oracle: the game is the model's own masked prediction over slot coalitions.
  const auto phi = shapley_bruteforce(K, [&](std::uint32_t mask) {
    std::vector<std::vector<std::size_t>> subset(B);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t k = 0; k < K; ++k)
        if (mask & (1u << k)) subset[b].push_back(sel[b][k]);
    return masked_forward(model, inputs, sel, subset).to_vector();
  });
  double sh = 0;
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t i = 0; i < phi[k].size(); ++i) sh = std::max(sh, std::abs(phi[k][i] - out.contributions[k][i]));
  rep.checks.push_back({"Shapley oracle", sh <= tol, sh, "brute-force Shapley over 2^K coalitions vs contributions"});
  return rep;
}

std::string faithfulness_to_json(const std::vector<FaithfulnessResult>& results) {
  json j = json::array();
  for (const auto& r : results) {
    j.push_back({{"k", r.k},
                 {"mean_change", r.mean_change},
                 {"mean_change_freq", r.mean_change_freq},
                 {"correlation", std::isnan(r.correlation) ? json(nullptr) : json(r.correlation)},
                 {"max_impact_error", r.max_impact_error},
                 {"pairs", r.pairs}});
  }
  return j.dump(2);
}

std::string attribution_to_json(const AttributionReport& report) {
  json j;
  j["alpha"] = report.alpha;
  j["horizon"] = report.horizon;
  j["channels"] = report.channels;
  j["samples"] = json::array();
  for (const auto& s : report.samples) {
    json js;
    js["y_freq"] = s.y_freq;
    js["y_res"] = s.y_res;
    js["y_hat"] = s.y_hat;
    js["frequencies"] = json::array();
    for (const auto& f : s.frequencies) {
      js["frequencies"].push_back({{"basis", f.basis},
                                   {"slot", f.slot},
                                   {"frequency", f.frequency},
                                   {"period_steps", f.period_steps},
                                   {"soft_weight", f.soft_weight},
                                   {"magnitude", f.magnitude},
                                   {"contribution", f.contribution}});
    }
    j["samples"].push_back(js);
  }
  return j.dump(2);
}

}  // namespace freqlens
