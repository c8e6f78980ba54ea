#include <doctest.h>

#include <cmath>
#include <numbers>
#include <set>

#include "freqlens/model.hpp"

using namespace freqlens;
using namespace freqlens::ad;

namespace {

ModelConfig small_config(std::uint64_t seed = 1) {
  ModelConfig c;
  c.input_len = 16;
  c.horizon = 8;
  c.channels = 2;
  c.hidden = 8;
  c.num_bases = 8;
  c.top_k = 4;
  c.seed = seed;
  return c;
}

Tensor random_inputs(Rng& rng, std::size_t B, const ModelConfig& c) {
  std::vector<double> v(B * c.input_len * c.channels);
  for (auto& x : v) x = rng.normal();
  return Tensor({B, c.input_len, c.channels}, std::move(v));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("compute_frequencies follows the sigmoid mapping") {
  ModelConfig c;  // L = 96
  FrequencyBank bank = init_frequency_bank(c);
  bank.theta = Tensor({3}, {0.0, 60.0, -60.0});
  bank.phase = Tensor::zeros({3});
  const Tensor f = compute_frequencies(bank);
  CHECK(f[0] == doctest::Approx(1.0 / 960 + (0.5 - 1.0 / 960) * 0.5).epsilon(1e-14));
  CHECK(f[0] == doctest::Approx(0.250521).epsilon(1e-6));
  CHECK(f[1] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(f[2] == doctest::Approx(1.0 / 960).epsilon(1e-12));
}

TEST_CASE("frequencies stay strictly inside (f_min, f_max) for any theta") {
  ModelConfig c;
  FrequencyBank bank = init_frequency_bank(c);
  Rng rng(3);
  std::vector<double> theta(10000);
  for (auto& t : theta) t = rng.uniform(-50.0, 50.0);
  theta[0] = -50.0;
  theta[1] = 50.0;
  bank.theta = Tensor({theta.size()}, theta);
  bank.phase = Tensor::zeros({theta.size()});
  const Tensor f = compute_frequencies(bank);
  for (std::size_t i = 0; i < f.numel(); ++i) {
    REQUIRE(f[i] > bank.f_min);
    REQUIRE(f[i] < bank.f_max);
  }
}

TEST_CASE("init_frequency_bank spaces targets log-uniformly on [1/L, 0.5]") {
  ModelConfig c;
  c.num_bases = 2;
  c.top_k = 1;
  auto f = compute_frequencies(init_frequency_bank(c));
  CHECK(std::abs(f[0] - 1.0 / 96) < 1e-12);
  CHECK(std::abs(f[1] - 0.5) < 1e-12);

  c.num_bases = 3;
  f = compute_frequencies(init_frequency_bank(c));
  CHECK(std::abs(f[1] - std::sqrt(0.5 / 96.0)) < 1e-12);
  CHECK(f[1] == doctest::Approx(0.07217).epsilon(1e-4));

  const auto bank = init_frequency_bank(c);
  for (double p : bank.phase.data()) CHECK(p == 0.0);
}

TEST_CASE("fixed-prior bank uses exact reciprocal periods and is frozen") {
  ModelConfig c;
  c.num_bases = 3;
  c.top_k = 2;
  c.freq_mode = FreqMode::FixedPrior;
  c.prior_periods = {12, 24, 168};
  const auto bank = init_frequency_bank(c);
  const Tensor f = compute_frequencies(bank);
  CHECK(f[0] == 1.0 / 12);
  CHECK(f[1] == 1.0 / 24);
  CHECK(f[2] == 1.0 / 168);
  CHECK_FALSE(bank.theta.requires_grad());
  CHECK_FALSE(bank.phase.requires_grad());

  ModelState m = init_model(c);
  for (const auto& p : m.parameters()) {
    if (p.group == ParamGroup::Frequency) CHECK_FALSE(p.trainable);
  }

  c.prior_periods = {2.0, 24, 168};
  CHECK_THROWS_AS(init_frequency_bank(c), std::invalid_argument);
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("build_bases evaluates cosines with phase and unit rows") {
  const auto b = build_bases(Tensor({1}, {0.25}), Tensor({1}, {0.0}), 4);
  const double expected[] = {1, 0, -1, 0};
  for (std::size_t t = 0; t < 4; ++t) CHECK(std::abs(b.raw[t] - expected[t]) < 1e-15);

  const auto shifted = build_bases(Tensor({1}, {0.137}), Tensor({1}, {std::numbers::pi}), 5);
  CHECK(shifted.raw[0] == doctest::Approx(-1.0).epsilon(1e-15));

  Rng rng(5);
  std::vector<double> f(6), ph(6);
  for (auto& x : f) x = rng.uniform(0.01, 0.49);
  for (auto& x : ph) x = rng.uniform(-3, 3);
  const auto many = build_bases(Tensor({6}, f), Tensor({6}, ph), 20);
  for (std::size_t i = 0; i < 6; ++i) {
    double s = 0.0;
    for (std::size_t t = 0; t < 20; ++t) s += many.normalized[i * 20 + t] * many.normalized[i * 20 + t];
    CHECK(std::abs(std::sqrt(s) - 1.0) < 1e-12);
    CHECK_FALSE(many.degenerate[i]);
  }
}

TEST_CASE("build_bases floors a zero-norm basis and flags it") {
  // L = 1 with phase pi/2 gives psi = [cos(pi/2)] ~ 6e-17.
  const auto b = build_bases(Tensor({1}, {0.1}), Tensor({1}, {std::numbers::pi / 2}), 1);
  CHECK(b.degenerate[0]);
  CHECK(std::isfinite(b.normalized[0]));
}

TEST_CASE("project computes inner products, components and reconstruction") {
  SUBCASE("self projection of a unit basis") {
    const auto b = build_bases(Tensor({1}, {0.1}), Tensor({1}, {0.3}), 12);
    const Tensor H = reshape(b.normalized, {1, 12, 1});
    const auto p = project(H, b.normalized, true);
    CHECK(p.coefficients[0] == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(max_abs_diff(reshape(*p.components, {1, 12, 1}), H) < 1e-14);
    CHECK(max_abs_diff(p.reconstruction, H) < 1e-14);  // N = 1: H_hat = H_1
  }
  SUBCASE("orthogonal input gives a zero coefficient") {
    const auto b = build_bases(Tensor({1}, {0.25}), Tensor({1}, {0.0}), 8);  // two full periods
    const Tensor H = Tensor::full({1, 8, 1}, 3.0);
    CHECK(std::abs(project(H, b.normalized).coefficients[0]) < 1e-14);
  }
  SUBCASE("signals in the span of orthogonal bases are reconstructed") {
    const std::size_t L = 16;
    const auto b = build_bases(Tensor({3}, {1.0 / 16, 2.0 / 16, 3.0 / 16}), Tensor::zeros({3}), L);
    Rng rng(9);
    std::vector<double> h(2 * L * 3, 0.0);
    for (std::size_t batch = 0; batch < 2; ++batch)
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const double w[] = {rng.normal(), rng.normal(), rng.normal()};
        for (std::size_t t = 0; t < L; ++t)
          for (std::size_t i = 0; i < 3; ++i) h[(batch * L + t) * 3 + ch] += w[i] * b.normalized[i * L + t];
      }
    const Tensor H({2, L, 3}, h);
    CHECK(max_abs_diff(project(H, b.normalized).reconstruction, H) < 1e-9);
  }
}

TEST_CASE("score_and_select limits and selection rules") {
  ModelConfig c = small_config();
  c.num_bases = 3;
  c.top_k = 1;
  ModelState m = init_model(c);
  // Make the shared scorer output zero so scores equal the per-basis bias.
  m.scorer.w2 = Tensor::zeros(m.scorer.w2.shape());
  m.scorer_bias = Tensor({3}, {3.0, 1.0, 2.0});
  Rng rng(1);
  const Tensor coeff({1, 3, c.hidden}, std::vector<double>(3 * c.hidden, 0.5));

  auto sel = score_and_select(m, coeff, 1e-3, false, nullptr);
  CHECK(sel.indices[0] == std::vector<std::size_t>{0});
  CHECK(sel.soft_weights[0] == doctest::Approx(1.0));
  CHECK(sel.soft_weights[1] < 1e-300);

  m.scorer_bias = Tensor::zeros({3});
  sel = score_and_select(m, coeff, 0.7, false, nullptr);
  for (std::size_t i = 0; i < 3; ++i) CHECK(sel.soft_weights[i] == doctest::Approx(1.0 / 3).epsilon(1e-15));

  m.config.top_k = 3;
  m.scorer_bias = Tensor({3}, {-4.0, 9.0, 0.5});
  sel = score_and_select(m, coeff, 1.0, true, &rng);
  CHECK(std::set<std::size_t>(sel.indices[0].begin(), sel.indices[0].end()) == std::set<std::size_t>{0, 1, 2});

  CHECK_THROWS_AS(score_and_select(m, coeff, 1.0, true, nullptr), std::invalid_argument);
  CHECK_THROWS_AS(score_and_select(m, coeff, 0.0, false, nullptr), std::invalid_argument);
}

TEST_CASE("low-temperature noiseless selection equals exact top-K of raw scores") {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    ModelState m = init_model(small_config(100 + trial));
    const Tensor X = random_inputs(rng, 4, m.config);
    const auto out = forward(m, X, {.tau = 0.1});
    for (std::size_t b = 0; b < 4; ++b) {
      std::vector<std::size_t> order(m.config.num_bases);
      std::iota(order.begin(), order.end(), std::size_t{0});
      const std::size_t N = m.config.num_bases;
      std::sort(order.begin(), order.end(),
                [&](std::size_t x, std::size_t y) { return out.scores[b * N + x] > out.scores[b * N + y]; });
      const std::set<std::size_t> expected(order.begin(), order.begin() + 4);
      CHECK(std::set<std::size_t>(out.selected[b].begin(), out.selected[b].end()) == expected);
      double total = 0.0;
      for (std::size_t i = 0; i < N; ++i) total += out.soft_weights[b * N + i];
      CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("bias-free heads: null input, positive homogeneity, functional identity") {
  ModelState m = init_model(small_config(4));
  Rng rng(8);
  const std::size_t d = m.config.hidden;
  // Train-like weights: arbitrary values.
  for (auto& h : m.heads) {
    std::vector<double> w1(h.w1.numel()), w2(h.w2.numel());
    for (auto& x : w1) x = rng.normal();
    for (auto& x : w2) x = rng.normal();
    h.w1 = Tensor(h.w1.shape(), w1);
    h.w2 = Tensor(h.w2.shape(), w2);
  }
  const Tensor zero = Tensor::zeros({3, d});
  for (std::size_t k = 0; k < m.heads.size(); ++k) {
    const Tensor out = head_contribution(m, k, zero);
    for (double v : out.data()) CHECK(v == 0.0);
  }

  std::vector<double> cv(3 * d);
  for (auto& x : cv) x = rng.normal();
  const Tensor cf({3, d}, cv);
  const Tensor base = head_contribution(m, 1, cf);
  for (double lambda : {0.5, 2.0}) {
    const Tensor scaled = head_contribution(m, 1, cf * lambda);
    for (std::size_t i = 0; i < base.numel(); ++i) CHECK(scaled[i] == doctest::Approx(lambda * base[i]).epsilon(1e-12));
  }

  m.heads[2] = m.heads[0];
  const Tensor a = head_contribution(m, 0, cf);
  const Tensor b = head_contribution(m, 2, cf);
  CHECK(a.to_vector() == b.to_vector());
}

TEST_CASE("forward examples") {
  ModelState m = init_model(small_config(5));
  Rng rng(6);
  const Tensor X = random_inputs(rng, 3, m.config);

  SUBCASE("untrained fusion logit gives alpha = 1/2") {
    const auto out = forward(m, X);
    CHECK(out.alpha.item() == 0.5);
    for (std::size_t i = 0; i < out.y_hat.numel(); ++i) {
      CHECK(out.y_hat[i] == doctest::Approx((out.y_freq[i] + out.y_res[i]) / 2).epsilon(1e-14));
    }
  }
  SUBCASE("zero input propagates to zero output") {
    const auto out = forward(m, Tensor::zeros({2, m.config.input_len, m.config.channels}));
    for (double v : out.coefficients.data()) CHECK(v == 0.0);
    for (double v : out.y_freq.data()) CHECK(v == 0.0);
    for (double v : out.y_hat.data()) CHECK(v == 0.0);
  }
  SUBCASE("y_freq is the exact sum of contributions in every mode") {
    for (bool training : {false, true}) {
      const auto out = forward(m, X, {.tau = 0.5, .training = training, .rng = &rng});
      Tensor s = out.contributions[0];
      for (std::size_t k = 1; k < out.contributions.size(); ++k) s = s + out.contributions[k];
      CHECK(max_abs_diff(s, out.y_freq) < 1e-9);
    }
  }
  SUBCASE("frequency-only fusion pins alpha to one") {
    m.config.fusion = FusionMode::FrequencyOnly;
    const auto out = forward(m, X);
    CHECK(out.alpha.item() == 1.0);
    CHECK(out.y_hat.to_vector() == out.y_freq.to_vector());
  }
  SUBCASE("wrong input shape is rejected") {
    CHECK_THROWS_AS(forward(m, Tensor::zeros({2, m.config.input_len + 1, m.config.channels})), ShapeError);
  }
}

TEST_CASE("masked_forward completeness and faithfulness") {
  ModelState m = init_model(small_config(7));
  Rng rng(2);
  const Tensor X = random_inputs(rng, 3, m.config);
  const auto out = forward(m, X);
  const auto& S = out.selected;
  const std::vector<std::vector<std::size_t>> none(3);

  CHECK(masked_forward(m, X, S, S).to_vector() == out.y_freq.to_vector());
  const Tensor empty = masked_forward(m, X, S, none);
  for (double v : empty.data()) CHECK(v == 0.0);

  for (std::size_t k = 0; k < m.config.top_k; ++k) {
    auto without = S;
    for (auto& row : without) row.erase(row.begin() + static_cast<std::ptrdiff_t>(k));
    const Tensor drop = out.y_freq - masked_forward(m, X, S, without);
    const Tensor& contrib = out.contributions[k];
    CHECK(max_abs_diff(drop, contrib) < 1e-9);
    CHECK(max_abs_diff(out.y_freq - masked_sum(out, without), contrib) < 1e-9);
  }

  auto bad = S;
  for (std::size_t f = 0; f < m.config.num_bases; ++f) {
    if (std::find(S[0].begin(), S[0].end(), f) == S[0].end()) {
      bad[0] = {f};
      break;
    }
  }
  CHECK_THROWS_AS(masked_forward(m, X, S, bad), std::invalid_argument);
}

TEST_CASE("attribute reports contributions, periods and alpha") {
  ModelState m = init_model(small_config(8));
  m.fusion_logit = Tensor::scalar(0.8, true);
  Rng rng(4);
  const Tensor X = random_inputs(rng, 2, m.config);
  const auto out = forward(m, X);
  const auto report = attribute(out, m.config);
  CHECK(report.alpha == doctest::Approx(1.0 / (1.0 + std::exp(-0.8))).epsilon(1e-15));
  REQUIRE(report.samples.size() == 2);
  for (const auto& s : report.samples) {
    REQUIRE(s.frequencies.size() == m.config.top_k);
    std::vector<double> total(s.y_freq.size(), 0.0);
    for (const auto& fa : s.frequencies) {
      CHECK(fa.period_steps == doctest::Approx(1.0 / fa.frequency));
      for (std::size_t i = 0; i < total.size(); ++i) total[i] += fa.contribution[i];
    }
    for (std::size_t i = 0; i < total.size(); ++i) CHECK(std::abs(total[i] - s.y_freq[i]) < 1e-9);
  }
}

TEST_CASE("parameter counts at the reference configuration") {
  const ModelConfig c;  // L=96, H=96, C=7, d=64, N=32, K=8
  const auto p = parameter_counts(c);
  CHECK(p.input_proj == 448);
  CHECK(p.bank == 64);
  CHECK(p.heads == 376832);
  CHECK(p.heads / c.top_k == 47104);
  CHECK(p.residual == 86016);
  CHECK(p.fusion == 1);
  CHECK(p.scorer == 2112);
  const auto counted = init_model(c).parameter_counts();
  CHECK(counted.total() == p.total());
}

TEST_CASE("checkpoint round trip reproduces the forward pass bit for bit") {
  ModelState m = init_model(small_config(9));
  m.fusion_logit = Tensor::scalar(-0.3141592653589793, true);
  Rng rng(10);
  const Tensor X = random_inputs(rng, 3, m.config);
  const ModelState back = checkpoint_from_string(checkpoint_to_string(m));
  const auto a = forward(m, X);
  const auto b = forward(back, X);
  CHECK(a.y_hat.to_vector() == b.y_hat.to_vector());
  CHECK(a.selected == b.selected);
  CHECK(checkpoint_to_string(back) == checkpoint_to_string(m));

  CHECK_THROWS(checkpoint_from_string(R"({"format":"other","version":1})"));
  auto text = checkpoint_to_string(m);
  text.replace(text.find("\"version\":1"), 11, "\"version\":9");
  CHECK_THROWS(checkpoint_from_string(text));
}
