#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "freqlens/data.hpp"
#include "freqlens/rng.hpp"

using namespace freqlens;

namespace {

SeriesTable column_table(std::vector<double> v) {
  SeriesTable t;
  t.rows = v.size();
  t.cols = 1;
  t.values = std::move(v);
  t.channels = {"x"};
  return t;
}

// Independent two-pass oracle.
std::pair<double, double> mean_pstd(const std::vector<double>& v) {
  long double m = 0;
  for (double x : v) m += x;
  m /= v.size();
  long double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return {static_cast<double>(m), static_cast<double>(std::sqrt(s / v.size()))};
}

}  // namespace

TEST_CASE("parse_csv shapes, timestamp column and error positions") {
  const auto t = parse_csv("a,b\n1,2\n3,4\n5,6\n");
  CHECK(t.rows == 3);
  CHECK(t.cols == 2);
  CHECK(t.at(2, 1) == 6.0);

  const auto ts = parse_csv("date,OT,HUFL\n2016-07-01 00:00,1.5,2\n2016-07-01 01:00,2.5,3\n");
  CHECK(ts.cols == 2);
  CHECK(ts.channels == std::vector<std::string>{"OT", "HUFL"});
  CHECK(ts.at(1, 0) == 2.5);

  const auto sel = parse_csv("date,OT,HUFL\nx,1,2\ny,3,4\n", {.columns = {"HUFL"}});
  CHECK(sel.cols == 1);
  CHECK(sel.column(0) == std::vector<double>{2, 4});

  try {
    parse_csv("a,b\n1,2\n3,abc\n");
    FAIL("expected DataError");
  } catch (const DataError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("abc") != std::string::npos);
    CHECK(msg.find("line 3") != std::string::npos);
    CHECK(msg.find("column 2") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_csv(""), DataError);
  CHECK_THROWS_AS(parse_csv("a,b\n"), DataError);
}

TEST_CASE("rows with missing values are dropped and counted") {
  const auto t = parse_csv("a,b\n1,2\nnan,4\n5,\n7,8\n");
  CHECK(t.rows == 2);
  CHECK(t.dropped_rows == 2);
  CHECK(t.column(0) == std::vector<double>{1, 7});
}

TEST_CASE("write_csv round-trips exactly") {
  Rng rng(1);
  SeriesTable t;
  t.rows = 50;
  t.cols = 2;
  t.channels = {"p", "q"};
  for (int i = 0; i < 100; ++i) t.values.push_back(rng.normal() * 1e3);
  const auto path = std::filesystem::temp_directory_path() / "freqlens_roundtrip.csv";
  write_csv(t, path.string());
  const auto back = load_csv(path.string());
  CHECK(back.values == t.values);
  CHECK(back.channels == t.channels);
  std::filesystem::remove(path);
}

TEST_CASE("z-score example and train-only statistics") {
  const auto [norm, st] = fit_apply_zscore(column_table({1, 2, 3, 4}), {0, 4});
  CHECK(st.mean[0] == 2.5);
  CHECK(st.std[0] == doctest::Approx(std::sqrt(1.25)).epsilon(1e-15));
  const double expected[] = {-1.3416407864998738, -0.4472135954999579, 0.4472135954999579, 1.3416407864998738};
  for (int i = 0; i < 4; ++i) CHECK(std::abs(norm.values[i] - expected[i]) < 1e-12);
  CHECK(st.estimator == "population");

  Rng rng(4);
  std::vector<double> v(300);
  for (auto& x : v) x = 3.0 + 2.0 * rng.normal();
  auto table = column_table(v);
  const Segment train{0, 200};
  const auto [n, s] = fit_apply_zscore(table, train);
  const auto [m_oracle, sd_oracle] = mean_pstd({v.begin(), v.begin() + 200});
  CHECK(std::abs(s.mean[0] - m_oracle) < 1e-12);
  CHECK(std::abs(s.std[0] - sd_oracle) < 1e-12);
  const auto [m2, sd2] = mean_pstd({n.values.begin(), n.values.begin() + 200});
  CHECK(std::abs(m2) < 1e-9);
  CHECK(std::abs(sd2 - 1.0) < 1e-9);

  // No leakage: val/test content does not affect the statistics.
  for (std::size_t i = 200; i < 300; ++i) table.values[i] = rng.normal() * 100;
  std::reverse(table.values.begin() + 200, table.values.end());
  const auto s2 = fit_zscore(table, train);
  CHECK(s2.mean == s.mean);
  CHECK(s2.std == s.std);

  // Idempotent on standardized data and invertible.
  const auto again = fit_apply_zscore(n, train).first;
  for (std::size_t i = 0; i < 300; ++i) CHECK(std::abs(again.values[i] - n.values[i]) < 1e-9);
  const auto back = denormalize(n, s);
  for (std::size_t i = 0; i < 300; ++i) CHECK(std::abs(back.values[i] - v[i]) < 1e-12);

  try {
    fit_zscore(column_table({5, 5, 5}), {0, 3});
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("'x'") != std::string::npos);
  }
}

TEST_CASE("chronological splits") {
  const auto s = split_rows(1000, {}, 3600);
  CHECK(s.train.begin == 0);
  CHECK(s.train.end == 700);
  CHECK(s.val.end == 800);
  CHECK(s.test.end == 1000);

  SplitSpec months;
  months.mode = SplitSpec::Mode::Months;
  const auto m = split_rows(20000, months, 3600);
  CHECK(m.train.size() == 12 * 30 * 24);
  CHECK(m.val.size() == 4 * 30 * 24);
  CHECK(m.test.end == 20 * 30 * 24);
  CHECK(split_rows(100000, months, 900).train.size() == 12 * 30 * 96);
  CHECK_THROWS_AS(split_rows(1000, months, 3600), DataError);

  SplitSpec bad;
  bad.train = 0.8;
  CHECK_THROWS_AS(split_rows(100, bad, 3600), std::invalid_argument);
}

TEST_CASE("window counts and boundaries") {
  std::vector<double> v(500);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
  const auto table = column_table(v);

  const auto w = make_windows(table, 96, 96, {100, 300});
  CHECK(w.count == 9);
  // Last window's final target index is the segment end.
  CHECK(w.targets.back() == 299.0);
  CHECK(w.inputs.front() == 100.0);

  CHECK(make_windows(table, 96, 96, {0, 192}).count == 1);
  try {
    make_windows(table, 96, 96, {0, 191});
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("192") != std::string::npos);
  }

  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t L = 1 + rng.below(20), H = 1 + rng.below(20);
    const std::size_t len = L + H + rng.below(100);
    const std::size_t begin = rng.below(500 - len + 1);
    const auto ws = make_windows(table, L, H, {begin, begin + len});
    CHECK(ws.count == len - L - H + 1);
    CHECK(ws.targets.back() == static_cast<double>(begin + len - 1));
  }

  const auto [x, y] = w.batch({0, 8});
  CHECK(x.shape() == ad::Shape{2, 96, 1});
  CHECK(y.shape() == ad::Shape{2, 96, 1});
  CHECK(x[96] == 108.0);
  CHECK(y[0] == 196.0);
}

TEST_CASE("synth_series examples") {
  const auto t = synth_series({.components = {{24, 1, 0}}, .length = 96});
  CHECK(t.values[0] == 1.0);
  CHECK(t.values[12] == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(t.values[24] == doctest::Approx(1.0).epsilon(1e-15));

  // Variance over whole periods is a^2 / 2.
  const auto a = synth_series({.components = {{24, 3, 0.4}}, .length = 24 * 20});
  CHECK(mean_pstd(a.values).second * mean_pstd(a.values).second == doctest::Approx(4.5).epsilon(1e-12));

  const SynthSpec noisy{.components = {{24, 1, 0}, {12, 0.5, 0}}, .slope = 0.01, .noise_std = 0.1,
                        .length = 2000, .seed = 7};
  CHECK(synth_series(noisy).values == synth_series(noisy).values);
  CHECK(synth_series({.components = {{24, 1, 0}}, .length = 10, .seed = 1}).values ==
        synth_series({.components = {{24, 1, 0}}, .length = 10, .seed = 2}).values);

  CHECK_THROWS_AS(synth_series({.components = {{2.0, 1, 0}}}), std::invalid_argument);
  CHECK_THROWS_AS(synth_series({.components = {{1.0, 1, 0}}}), std::invalid_argument);
}
