#include "freqlens/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numbers>
#include <sstream>

#include "freqlens/rng.hpp"

namespace freqlens {

std::vector<double> SeriesTable::column(std::size_t c) const {
  std::vector<double> out(rows);
  for (std::size_t t = 0; t < rows; ++t) out[t] = at(t, c);
  return out;
}

namespace {

std::string trim(std::string s) {
  const auto ws = [](unsigned char ch) { return std::isspace(ch) != 0; };
  s.erase(s.begin(), std::find_if_not(s.begin(), s.end(), ws));
  s.erase(std::find_if_not(s.rbegin(), s.rend(), ws).base(), s.end());
  return s;
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string lower(std::string s) {
  for (auto& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return s;
}

bool is_missing(const std::string& s) {
  const auto l = lower(s);
  return l.empty() || l == "nan" || l == "na" || l == "null";
}

}  // namespace

SeriesTable parse_csv(const std::string& text, const CsvOptions& options) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!trim(line).empty()) {
      header = split_line(line);
      break;
    }
  }
  if (header.empty()) throw DataError("empty CSV input");

  const bool has_time = lower(header[0]) == lower(options.timestamp_column);
  std::vector<std::size_t> keep;
  std::vector<std::string> names;
  if (options.columns.empty()) {
    for (std::size_t j = has_time ? 1 : 0; j < header.size(); ++j) {
      keep.push_back(j);
      names.push_back(header[j]);
    }
  } else {
    for (const auto& want : options.columns) {
      const auto it = std::find(header.begin(), header.end(), want);
      if (it == header.end()) throw DataError("column '" + want + "' not found in header");
      keep.push_back(static_cast<std::size_t>(it - header.begin()));
      names.push_back(want);
    }
  }
  if (keep.empty()) throw DataError("CSV has no data columns");

  SeriesTable table;
  table.cols = keep.size();
  table.channels = names;
  table.step_duration = options.step_duration;
  std::vector<double> row(keep.size());
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const auto cells = split_line(line);
    if (cells.size() != header.size()) {
      throw DataError("line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                      " cells, got " + std::to_string(cells.size()));
    }
    bool missing = false;
    for (std::size_t j = 0; j < keep.size(); ++j) {
      const std::string& cell = cells[keep[j]];
      if (is_missing(cell)) {
        missing = true;
        continue;
      }
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc() || ptr != cell.data() + cell.size()) {
        throw DataError("unparseable cell '" + cell + "' at line " + std::to_string(line_no) + ", column " +
                        std::to_string(keep[j] + 1) + " (" + header[keep[j]] + ")");
      }
      if (std::isnan(v)) missing = true;
      row[j] = v;
    }
    if (missing) {
      ++table.dropped_rows;
      continue;
    }
    table.values.insert(table.values.end(), row.begin(), row.end());
    ++table.rows;
  }
  if (table.rows == 0) throw DataError("CSV has a header but no data rows");
  if (table.dropped_rows > 0) {
    std::cerr << "warning: dropped " << table.dropped_rows << " rows containing missing values\n";
  }
  return table;
}

SeriesTable load_csv(const std::string& path, const CsvOptions& options) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_csv(ss.str(), options);
}

void write_csv(const SeriesTable& table, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path);
  for (std::size_t c = 0; c < table.cols; ++c) f << (c ? "," : "") << table.channels[c];
  f << '\n';
  char buf[32];
  for (std::size_t t = 0; t < table.rows; ++t) {
    for (std::size_t c = 0; c < table.cols; ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", table.at(t, c));
      f << (c ? "," : "") << buf;
    }
    f << '\n';
  }
}

Splits split_rows(std::size_t rows, const SplitSpec& spec, double step_duration) {
  Splits s;
  if (spec.mode == SplitSpec::Mode::Ratio) {
    if (spec.train <= 0 || spec.val < 0 || spec.test < 0 || std::abs(spec.train + spec.val + spec.test - 1.0) > 1e-9) {
      throw std::invalid_argument("split fractions must be nonnegative and sum to 1");
    }
    const auto n_train = static_cast<std::size_t>(std::floor(spec.train * static_cast<double>(rows)));
    const auto n_val = static_cast<std::size_t>(std::floor(spec.val * static_cast<double>(rows)));
    s.train = {0, n_train};
    s.val = {n_train, n_train + n_val};
    s.test = {n_train + n_val, rows};
    return s;
  }
  if (step_duration <= 0) throw std::invalid_argument("step_duration must be positive");
  const double per_month = 30.0 * 86400.0 / step_duration;
  const auto to_rows = [&](double months) { return static_cast<std::size_t>(std::llround(months * per_month)); };
  const std::size_t a = to_rows(spec.train_months);
  const std::size_t b = a + to_rows(spec.val_months);
  const std::size_t c = b + to_rows(spec.test_months);
  if (c > rows) {
    throw DataError("month split needs " + std::to_string(c) + " rows, table has " + std::to_string(rows));
  }
  s.train = {0, a};
  s.val = {a, b};
  s.test = {b, c};
  return s;
}

NormStats fit_zscore(const SeriesTable& table, const Segment& train) {
  if (train.size() == 0 || train.end > table.rows) throw DataError("train split is empty or out of range");
  NormStats st;
  st.mean.assign(table.cols, 0.0);
  st.std.assign(table.cols, 0.0);
  const double n = static_cast<double>(train.size());
  for (std::size_t c = 0; c < table.cols; ++c) {
    double m = 0.0;
    for (std::size_t t = train.begin; t < train.end; ++t) m += table.at(t, c);
    m /= n;
    double v = 0.0;
    for (std::size_t t = train.begin; t < train.end; ++t) v += (table.at(t, c) - m) * (table.at(t, c) - m);
    const double sd = std::sqrt(v / n);
    if (!(sd > 0.0)) throw DataError("channel '" + table.channels[c] + "' is constant on the train split");
    st.mean[c] = m;
    st.std[c] = sd;
  }
  return st;
}

SeriesTable apply_zscore(const SeriesTable& table, const NormStats& stats) {
  SeriesTable out = table;
  for (std::size_t t = 0; t < table.rows; ++t)
    for (std::size_t c = 0; c < table.cols; ++c)
      out.values[t * table.cols + c] = (table.at(t, c) - stats.mean[c]) / stats.std[c];
  return out;
}

SeriesTable denormalize(const SeriesTable& table, const NormStats& stats) {
  SeriesTable out = table;
  for (std::size_t t = 0; t < table.rows; ++t)
    for (std::size_t c = 0; c < table.cols; ++c)
      out.values[t * table.cols + c] = table.at(t, c) * stats.std[c] + stats.mean[c];
  return out;
}

std::pair<SeriesTable, NormStats> fit_apply_zscore(const SeriesTable& table, const Segment& train) {
  NormStats st = fit_zscore(table, train);
  return {apply_zscore(table, st), st};
}

WindowSet make_windows(const SeriesTable& table, std::size_t L, std::size_t H, const Segment& seg) {
  if (seg.end > table.rows || seg.begin > seg.end) throw DataError("segment out of range");
  if (seg.size() < L + H) {
    throw DataError("segment of length " + std::to_string(seg.size()) + " is too short; need at least L+H = " +
                    std::to_string(L + H));
  }
  WindowSet w;
  w.input_len = L;
  w.horizon = H;
  w.channels = table.cols;
  w.count = seg.size() - L - H + 1;
  const std::size_t C = table.cols;
  w.inputs.reserve(w.count * L * C);
  w.targets.reserve(w.count * H * C);
  for (std::size_t i = 0; i < w.count; ++i) {
    const std::size_t s = seg.begin + i;
    w.starts.push_back(s);
    const auto base = table.values.begin() + static_cast<std::ptrdiff_t>(s * C);
    w.inputs.insert(w.inputs.end(), base, base + static_cast<std::ptrdiff_t>(L * C));
    w.targets.insert(w.targets.end(), base + static_cast<std::ptrdiff_t>(L * C),
                     base + static_cast<std::ptrdiff_t>((L + H) * C));
  }
  return w;
}

std::pair<Tensor, Tensor> WindowSet::batch(const std::vector<std::size_t>& indices) const {
  const std::size_t in = input_len * channels, out = horizon * channels;
  std::vector<double> x, y;
  x.reserve(indices.size() * in);
  y.reserve(indices.size() * out);
  for (auto i : indices) {
    if (i >= count) throw std::out_of_range("window index " + std::to_string(i) + " out of range");
    x.insert(x.end(), inputs.begin() + static_cast<std::ptrdiff_t>(i * in),
             inputs.begin() + static_cast<std::ptrdiff_t>((i + 1) * in));
    y.insert(y.end(), targets.begin() + static_cast<std::ptrdiff_t>(i * out),
             targets.begin() + static_cast<std::ptrdiff_t>((i + 1) * out));
  }
  const std::size_t B = indices.size();
  return {Tensor({B, input_len, channels}, std::move(x)), Tensor({B, horizon, channels}, std::move(y))};
}

std::pair<Tensor, Tensor> WindowSet::all() const {
  std::vector<std::size_t> idx(count);
  for (std::size_t i = 0; i < count; ++i) idx[i] = i;
  return batch(idx);
}

double WindowSet::target_variance() const {
  double m = 0.0;
  for (double v : targets) m += v;
  m /= static_cast<double>(targets.size());
  double s = 0.0;
  for (double v : targets) s += (v - m) * (v - m);
  return s / static_cast<double>(targets.size());
}

SeriesTable synth_series(const SynthSpec& spec) {
  for (const auto& c : spec.components) {
    if (!(c.period > 2.0)) {
      throw std::invalid_argument("period " + std::to_string(c.period) + " is at or above Nyquist; must exceed 2 steps");
    }
  }
  if (spec.noise_std < 0) throw std::invalid_argument("noise_std must be nonnegative");
  Rng rng(spec.seed);
  SeriesTable t;
  t.rows = spec.length;
  t.cols = 1;
  t.channels = {"x"};
  t.step_duration = spec.step_duration;
  t.values.resize(spec.length);
  for (std::size_t i = 0; i < spec.length; ++i) {
    const double ti = static_cast<double>(i);
    double x = spec.slope * ti;
    for (const auto& c : spec.components) x += c.amplitude * std::cos(2.0 * std::numbers::pi * ti / c.period + c.phase);
    if (spec.noise_std > 0) x += spec.noise_std * rng.normal();
    t.values[i] = x;
  }
  return t;
}

}  // namespace freqlens
