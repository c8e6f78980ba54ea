#include <doctest.h>

#include <cmath>
#include <numbers>

#include "freqlens/train.hpp"

using namespace freqlens;
using namespace freqlens::ad;

namespace {

double div_oracle(std::vector<double> f, double eps) {
  std::sort(f.begin(), f.end());
  double s = 0.0;
  for (std::size_t j = 0; j + 1 < f.size(); ++j) s += std::log(std::log(f[j + 1]) - std::log(f[j]) + eps);
  return -s / static_cast<double>(f.size() - 1);
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.hidden = 4;
  c.num_bases = 4;
  c.top_k = 2;
  c.input_len = 8;
  c.horizon = 4;
  c.channels = 1;
  c.scorer_hidden = 8;
  c.seed = 3;
  return c;
}

std::vector<Tensor> parameter_values(ModelState& m) {
  std::vector<Tensor> v;
  for (const auto& p : m.parameters()) v.push_back(*p.tensor);
  return v;
}

WindowSet cosine_windows(std::size_t L, std::size_t H, std::size_t T, double noise, std::uint64_t seed) {
  const auto table = synth_series({.components = {{24, 1, 0}}, .noise_std = noise, .length = T, .seed = seed});
  return make_windows(table, L, H, {0, T});
}

}  // namespace

TEST_CASE("diversity_loss examples") {
  CHECK(diversity_loss(Tensor({2}, {0.01, 0.1})).item() == doctest::Approx(-0.834032).epsilon(1e-6));
  CHECK(std::abs(diversity_loss(Tensor({2}, {0.01, 0.1})).item() - div_oracle({0.01, 0.1}, 1e-6)) < 1e-15);
  CHECK(std::abs(diversity_loss(Tensor({2}, {0.01, 0.02})).item() - diversity_loss(Tensor({2}, {0.1, 0.2})).item()) <
        1e-12);
  CHECK(diversity_loss(Tensor({2}, {0.1, 0.1})).item() == doctest::Approx(-std::log(1e-6)).epsilon(1e-12));
  CHECK(diversity_loss(Tensor({2}, {0.1, 0.1})).item() == doctest::Approx(13.816).epsilon(1e-4));

  Rng rng(5);
  for (int i = 0; i < 20; ++i) {
    std::vector<double> f(6);
    for (auto& x : f) x = std::exp(rng.uniform(std::log(0.002), std::log(0.5)));
    CHECK(std::abs(diversity_loss(Tensor({6}, f)).item() - div_oracle(f, 1e-6)) < 1e-12);
  }
}

TEST_CASE("diversity_loss decreases as an interior frequency moves to its neighbours' log-midpoint") {
  Rng rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> f(3);
    for (auto& x : f) x = std::exp(rng.uniform(std::log(0.002), std::log(0.5)));
    std::sort(f.begin(), f.end());
    if (f[2] / f[0] < 1.01) continue;
    const double mid = std::sqrt(f[0] * f[2]);
    if (std::abs(std::log(f[1] / mid)) < 1e-3) continue;
    auto g = f;
    g[1] = std::exp(std::log(f[1]) + 0.25 * (std::log(mid) - std::log(f[1])));
    CHECK(div_oracle(g, 1e-6) < div_oracle(f, 1e-6));
    CHECK(diversity_loss(Tensor({3}, g)).item() < diversity_loss(Tensor({3}, f)).item());
  }
}

TEST_CASE("orthogonality_loss examples") {
  CHECK(orthogonality_loss(Tensor({2, 3}, {1, 0, 0, 0, 2, 0})).item() == 0.0);
  CHECK(orthogonality_loss(Tensor({2, 2}, {0.3, 0.4, 0.3, 0.4})).item() == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(orthogonality_loss(Tensor({1, 4}, {1, 2, 3, 4})).item() == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(std::isfinite(orthogonality_loss(Tensor({2, 2}, {0, 0, 1, 1})).item()));
}

TEST_CASE("total_loss examples") {
  ModelConfig c = tiny_config();
  Rng rng(2);
  std::vector<double> xv(2 * 8);
  for (auto& x : xv) x = rng.normal();
  const Tensor X({2, 8, 1}, xv);

  SUBCASE("all weights zero gives plain MSE") {
    const ModelState m = init_model(c);
    const auto out = forward(m, X);
    const Tensor y = Tensor::full({2, 4, 1}, 0.3);
    const auto l = total_loss(out, y, {.lambda_div = 0, .lambda_recon = 0, .lambda_sparse = 0}, m.config.freq_mode);
    double mse = 0.0;
    for (std::size_t i = 0; i < 8; ++i) mse += (out.y_hat[i] - 0.3) * (out.y_hat[i] - 0.3);
    CHECK(l.total.item() == doctest::Approx(mse / 8).epsilon(1e-15));
  }
  SUBCASE("single basis, perfect prediction") {
    c.num_bases = 1;
    c.top_k = 1;
    const ModelState m = init_model(c);
    const auto out = forward(m, X);
    const LossWeights w;
    const auto l = total_loss(out, out.y_hat, w, m.config.freq_mode);
    CHECK(l.pred == 0.0);
    CHECK(l.div == 0.0);
    CHECK(l.sparse == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(l.total.item() == doctest::Approx(w.lambda_recon * l.recon + w.lambda_sparse).epsilon(1e-14));
  }
  SUBCASE("sparsity term is constant for softmax weights") {
    const ModelState m = init_model(c);
    const auto out = forward(m, X, {.tau = 0.3});
    CHECK(total_loss(out, out.y_hat, {}, m.config.freq_mode).sparse == doctest::Approx(1.0).epsilon(1e-14));
  }
  SUBCASE("fixed-prior mode uses the orthogonality penalty") {
    c.freq_mode = FreqMode::FixedPrior;
    c.prior_periods = {24, 12, 6, 3};
    const ModelState m = init_model(c);
    const auto out = forward(m, X);
    const auto l = total_loss(out, out.y_hat, {}, m.config.freq_mode);
    const Tensor feats = reshape(swap_axes(out.coefficients, 0, 1), {4, 2 * 4});
    CHECK(l.div == orthogonality_loss(feats).item());
  }
}

TEST_CASE("total_loss gradients match finite differences on a tiny model") {
  for (std::uint64_t seed : {3u, 4u, 5u}) {
    ModelConfig c = tiny_config();
    c.seed = seed;
    ModelState m = init_model(c);
    Rng rng(seed);
    std::vector<double> xv(2 * 8), yv(2 * 4);
    for (auto& x : xv) x = rng.normal();
    for (auto& y : yv) y = rng.normal();
    const Tensor X({2, 8, 1}, xv), Y({2, 4, 1}, yv);
    const auto point = parameter_values(m);
    const auto fn = [&](std::span<const Tensor> p) {
      ModelState local = m;
      auto refs = local.parameters();
      for (std::size_t i = 0; i < refs.size(); ++i) *refs[i].tensor = p[i];
      return total_loss(forward(local, X), Y, {}, c.freq_mode).total;
    };
    const auto r = check_gradients(fn, point, 1e-6);
    INFO("seed " << seed << " worst input " << r.worst_input << " analytic " << r.analytic << " numeric " << r.numeric);
    CHECK(r.max_relative_error < 1e-3);
  }
}

TEST_CASE("Adam closed-form steps and group learning rates") {
  ModelConfig c = tiny_config();
  ModelState m = init_model(c);
  const auto before = parameter_values(m);

  Adam zero(m);
  for (int i = 0; i < 3; ++i) zero.step(backward(sum(m.bank.theta) * 0.0), 1e-3);
  const auto after = parameter_values(m);
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(after[i].to_vector() == before[i].to_vector());

  Adam adam(m);
  const double theta0 = m.bank.theta[0], w0 = m.input_proj[0];
  adam.step(backward(slice(m.bank.theta, 0, 0, 1) * 1.0 + slice(reshape(m.input_proj, {4}), 0, 0, 1)), 1e-3);
  const double d_other = m.input_proj[0] - w0;
  const double d_freq = m.bank.theta[0] - theta0;
  CHECK(d_other == doctest::Approx(-1e-3).epsilon(1e-6));
  CHECK(d_freq == doctest::Approx(5.0 * d_other).epsilon(1e-12));
  CHECK(m.input_proj[1] == before[0][1]);

  Adam nan_adam(m);
  try {
    nan_adam.step(backward(sum(m.bank.theta * std::nan(""))), 1e-3);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("bank.theta") != std::string::npos);
  }
}

TEST_CASE("fixed-prior parameters are never updated") {
  ModelConfig c = tiny_config();
  c.freq_mode = FreqMode::FixedPrior;
  c.prior_periods = {24, 12, 6, 4};
  const auto w = cosine_windows(8, 4, 60, 0.0, 1);
  const auto res = train(init_model(c), w, w, {.epochs = 2, .batch_size = 8}, {});
  for (const auto& rec : res.log) CHECK(rec.frequencies == std::vector<double>{1.0 / 24, 1.0 / 12, 1.0 / 6, 1.0 / 4});
}

TEST_CASE("schedules") {
  const TrainConfig c{.epochs = 11, .base_lr = 2e-3};
  CHECK(schedule_at(0, c).lr == 2e-3);
  CHECK(schedule_at(0, c).tau == 1.0);
  CHECK(schedule_at(10, c).lr == 0.0);
  CHECK(schedule_at(10, c).tau == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(schedule_at(5, c).lr == doctest::Approx(1e-3).epsilon(1e-14));
  CHECK(schedule_at(5, c).tau == doctest::Approx(0.55).epsilon(1e-14));
  CHECK(schedule_at(0, {.epochs = 1}).lr == 1e-3);
  for (std::size_t e = 1; e < 11; ++e) {
    CHECK(schedule_at(e, c).lr < schedule_at(e - 1, c).lr);
    CHECK(schedule_at(e, c).tau < schedule_at(e - 1, c).tau);
  }
  CHECK_THROWS(schedule_at(11, c));
}

TEST_CASE("early stopping semantics") {
  EarlyStopping s(1);
  CHECK(s.update(1.0));
  CHECK_FALSE(s.should_stop());
  CHECK_FALSE(s.update(2.0));
  CHECK(s.should_stop());  // stops after the second epoch, best is the first
  CHECK(s.best() == 1.0);

  EarlyStopping p(3);
  for (double v : {5.0, 4.0, 4.0, 4.5, 3.9, 4.0, 4.0}) p.update(v);
  CHECK_FALSE(p.should_stop());
  p.update(3.9);
  CHECK(p.should_stop());
}

TEST_CASE("training is deterministic, keeps the best checkpoint and learns a cosine") {
  ModelConfig c;
  c.input_len = 48;
  c.horizon = 12;
  c.channels = 1;
  c.hidden = 16;
  c.num_bases = 8;
  c.top_k = 4;
  c.seed = 11;
  const auto table = synth_series({.components = {{24, 1, 0}}, .length = 600});
  const auto splits = split_rows(table.rows, {}, 3600);
  const auto [norm, stats] = fit_apply_zscore(table, splits.train);
  const auto tr = make_windows(norm, 48, 12, splits.train);
  const auto va = make_windows(norm, 48, 12, splits.val);
  const TrainConfig tc{.epochs = 12, .base_lr = 3e-3, .patience = 4, .seed = 5};

  const auto a = train(init_model(c), tr, va, tc, {});
  const auto b = train(init_model(c), tr, va, tc, {});
  CHECK(train_log_to_jsonl(a.log) == train_log_to_jsonl(b.log));
  CHECK(checkpoint_to_string(a.best) == checkpoint_to_string(b.best));

  for (const auto& r : a.log) {
    CHECK(a.best_val_mse <= r.val_mse);
    CHECK(r.sparse == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK(evaluate_mse(a.best, va) == a.best_val_mse);
  CHECK(evaluate_mse(a.best, tr) < 0.1 * tr.target_variance());

  const auto one = train(init_model(c), tr, va, {.epochs = 1}, {});
  CHECK(one.log.size() == 1);
}

TEST_CASE("non-finite loss aborts with a diagnostic") {
  ModelConfig c = tiny_config();
  auto w = cosine_windows(8, 4, 40, 0.0, 1);
  w.inputs[3] = std::numeric_limits<double>::infinity();
  try {
    train(init_model(c), w, w, {.epochs = 1, .batch_size = 64}, {});
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("epoch 0") != std::string::npos);
    CHECK(msg.find("batch 0") != std::string::npos);
  }
}
