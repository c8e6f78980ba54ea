#include "freqlens/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "freqlens/rng.hpp"
#include "freqlens/stats.hpp"

namespace freqlens {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

using PeriodTable = std::map<std::string, double>;

struct Binding {
  std::function<json(const RunConfig&)> get;
  std::function<void(RunConfig&, const json&)> set;
};

template <typename T, typename Member>
Binding field(Member member) {
  return {[member](const RunConfig& c) { return json(member(const_cast<RunConfig&>(c))); },
          [member](RunConfig& c, const json& j) { member(c) = j.get<T>(); }};
}

#define FL_FIELD(key, type, expr) {key, field<type>([](RunConfig& c) -> type& { return expr; })}

const std::map<std::string, Binding>& bindings() {
  static const std::map<std::string, Binding> table = {
      FL_FIELD("data_path", std::string, c.data_path),
      FL_FIELD("columns", std::vector<std::string>, c.columns),
      FL_FIELD("timestamp_column", std::string, c.timestamp_column),
      FL_FIELD("step_duration", double, c.step_duration),
      FL_FIELD("synth_periods", std::vector<double>, c.synth_periods),
      FL_FIELD("synth_amplitudes", std::vector<double>, c.synth_amplitudes),
      FL_FIELD("synth_phases", std::vector<double>, c.synth_phases),
      FL_FIELD("synth_slope", double, c.synth_slope),
      FL_FIELD("synth_noise", double, c.synth_noise),
      FL_FIELD("synth_length", std::size_t, c.synth_length),
      FL_FIELD("synth_seed", std::uint64_t, c.synth_seed),
      {"split_mode",
       {[](const RunConfig& c) { return json(c.split.mode == SplitSpec::Mode::Ratio ? "ratio" : "months"); },
        [](RunConfig& c, const json& j) {
          const auto s = j.get<std::string>();
          if (s == "ratio") c.split.mode = SplitSpec::Mode::Ratio;
          else if (s == "months") c.split.mode = SplitSpec::Mode::Months;
          else throw UsageError("split_mode must be 'ratio' or 'months', got '" + s + "'");
        }}},
      FL_FIELD("split_train", double, c.split.train),
      FL_FIELD("split_val", double, c.split.val),
      FL_FIELD("split_test", double, c.split.test),
      FL_FIELD("split_train_months", double, c.split.train_months),
      FL_FIELD("split_val_months", double, c.split.val_months),
      FL_FIELD("split_test_months", double, c.split.test_months),
      FL_FIELD("input_len", std::size_t, c.model.input_len),
      FL_FIELD("horizon", std::size_t, c.model.horizon),
      FL_FIELD("hidden", std::size_t, c.model.hidden),
      FL_FIELD("num_bases", std::size_t, c.model.num_bases),
      FL_FIELD("top_k", std::size_t, c.model.top_k),
      FL_FIELD("scorer_hidden", std::size_t, c.model.scorer_hidden),
      {"freq_mode",
       {[](const RunConfig& c) { return json(to_string(c.model.freq_mode)); },
        [](RunConfig& c, const json& j) { c.model.freq_mode = parse_freq_mode(j.get<std::string>()); }}},
      FL_FIELD("prior_periods", std::vector<double>, c.model.prior_periods),
      {"fusion",
       {[](const RunConfig& c) { return json(to_string(c.model.fusion)); },
        [](RunConfig& c, const json& j) { c.model.fusion = parse_fusion_mode(j.get<std::string>()); }}},
      FL_FIELD("epochs", std::size_t, c.train.epochs),
      FL_FIELD("base_lr", double, c.train.base_lr),
      FL_FIELD("freq_lr_multiplier", double, c.train.freq_lr_multiplier),
      FL_FIELD("batch_size", std::size_t, c.train.batch_size),
      FL_FIELD("patience", std::size_t, c.train.patience),
      FL_FIELD("tau_start", double, c.train.tau_start),
      FL_FIELD("tau_end", double, c.train.tau_end),
      FL_FIELD("beta1", double, c.train.beta1),
      FL_FIELD("beta2", double, c.train.beta2),
      FL_FIELD("max_batches_per_epoch", std::size_t, c.train.max_batches_per_epoch),
      FL_FIELD("lambda_div", double, c.loss.lambda_div),
      FL_FIELD("lambda_recon", double, c.loss.lambda_recon),
      FL_FIELD("lambda_sparse", double, c.loss.lambda_sparse),
      FL_FIELD("lambda_variance", double, c.loss.lambda_variance),
      FL_FIELD("epsilon_div", double, c.loss.epsilon_div),
      FL_FIELD("known_periods", PeriodTable, c.known_periods),
      FL_FIELD("delta", double, c.delta),
      FL_FIELD("faithfulness_k", std::vector<std::size_t>, c.faithfulness_k),
      FL_FIELD("out_dir", std::string, c.out_dir),
      FL_FIELD("seeds", std::vector<std::uint64_t>, c.seeds),
  };
  return table;
}

#undef FL_FIELD

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw UsageError("cannot write " + path.string());
  f << text;
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw UsageError("cannot read " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

RunConfig run_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw UsageError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw UsageError("config must be a JSON object");
  RunConfig c;
  for (const auto& [key, value] : j.items()) {
    const auto it = bindings().find(key);
    if (it == bindings().end()) throw UsageError("unknown config key '" + key + "'");
    try {
      it->second.set(c, value);
    } catch (const json::exception& e) {
      throw UsageError("config key '" + key + "': " + e.what());
    } catch (const std::invalid_argument& e) {
      throw UsageError("config key '" + key + "': " + e.what());
    }
  }
  return c;
}

std::string run_config_to_json(const RunConfig& c) {
  json j = json::object();
  for (const auto& [key, b] : bindings()) j[key] = b.get(c);
  return j.dump(2);
}

RunConfig load_run_config(const std::string& path) { return run_config_from_json(read_file(path)); }

const WindowSet& PreparedData::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "val") return val;
  if (name == "test") return test;
  throw UsageError("split must be train, val or test, got '" + name + "'");
}

SeriesTable load_series(const RunConfig& c) {
  if (!c.data_path.empty()) {
    CsvOptions opt;
    opt.timestamp_column = c.timestamp_column;
    opt.columns = c.columns;
    opt.step_duration = c.step_duration;
    return load_csv(c.data_path, opt);
  }
  if (c.synth_amplitudes.size() != c.synth_periods.size() || c.synth_phases.size() != c.synth_periods.size()) {
    throw UsageError("synth_periods, synth_amplitudes and synth_phases must have equal lengths");
  }
  SynthSpec s;
  for (std::size_t i = 0; i < c.synth_periods.size(); ++i) {
    s.components.push_back({c.synth_periods[i], c.synth_amplitudes[i], c.synth_phases[i]});
  }
  s.slope = c.synth_slope;
  s.noise_std = c.synth_noise;
  s.length = c.synth_length;
  s.seed = c.synth_seed;
  s.step_duration = c.step_duration;
  return synth_series(s);
}

PreparedData prepare_data(const RunConfig& c) {
  PreparedData d;
  d.raw = load_series(c);
  d.splits = split_rows(d.raw.rows, c.split, c.step_duration);
  std::tie(d.normalized, d.stats) = fit_apply_zscore(d.raw, d.splits.train);
  const std::size_t L = c.model.input_len, H = c.model.horizon;
  d.train = make_windows(d.normalized, L, H, d.splits.train);
  d.val = make_windows(d.normalized, L, H, d.splits.val);
  d.test = make_windows(d.normalized, L, H, d.splits.test);
  return d;
}

namespace {

ModelConfig model_config_for(const RunConfig& c, const PreparedData& d, std::uint64_t seed) {
  ModelConfig m = c.model;
  m.channels = d.raw.cols;
  m.seed = seed;
  m.validate();
  return m;
}

std::string norm_stats_json(const NormStats& s, const SeriesTable& t) {
  return json({{"channels", t.channels}, {"mean", s.mean}, {"std", s.std}, {"estimator", s.estimator}}).dump(2);
}

std::string loss_curve_csv(const std::vector<EpochRecord>& log) {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,L_pred,L_div,L_recon,L_sparse,total,val_mse,tau,lr\n";
  for (const auto& r : log) {
    out << r.epoch << ',' << r.pred << ',' << r.div << ',' << r.recon << ',' << r.sparse << ',' << r.total << ','
        << r.val_mse << ',' << r.tau << ',' << r.lr << '\n';
  }
  return out.str();
}

}  // namespace

std::string train_seed(const RunConfig& c, const PreparedData& d, std::uint64_t seed) {
  TrainConfig tc = c.train;
  tc.seed = seed;
  const auto result = train(init_model(model_config_for(c, d, seed)), d.train, d.val, tc, c.loss);
  const fs::path dir = fs::path(c.out_dir) / ("seed_" + std::to_string(seed));
  fs::create_directories(dir);
  save_checkpoint(result.best, (dir / "checkpoint.json").string());
  write_file(dir / "train_log.jsonl", train_log_to_jsonl(result.log));
  write_file(dir / "loss_curve.csv", loss_curve_csv(result.log));
  write_file(dir / "norm_stats.json", norm_stats_json(d.stats, d.raw));
  return dir.string();
}

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<double> delta;
  std::optional<std::size_t> topk;
};

RunConfig resolve(const Common& o) {
  RunConfig c = o.config_path.empty() ? RunConfig{} : load_run_config(o.config_path);
  if (o.out) c.out_dir = *o.out;
  if (o.delta) c.delta = *o.delta;
  if (o.topk) c.model.top_k = *o.topk;
  if (o.seed) c.seeds = {*o.seed};
  return c;
}

void check_compatible(const ModelState& m, const RunConfig& c, const PreparedData& d) {
  const auto& mc = m.config;
  if (mc.input_len != c.model.input_len || mc.horizon != c.model.horizon || mc.channels != d.raw.cols) {
    std::ostringstream s;
    s << "checkpoint (L=" << mc.input_len << ", H=" << mc.horizon << ", C=" << mc.channels
      << ") does not match config/data (L=" << c.model.input_len << ", H=" << c.model.horizon << ", C=" << d.raw.cols
      << ")";
    throw UsageError(s.str());
  }
}

std::vector<double> load_metric_list(const std::string& path, const std::string& metric) {
  json j = json::parse(read_file(path));
  if (j.is_array()) return j.get<std::vector<double>>();
  if (j.contains(metric) && j[metric].is_array()) return j[metric].get<std::vector<double>>();
  if (j.contains("runs")) {
    std::vector<double> out;
    for (const auto& r : j["runs"]) out.push_back(r.at(metric).get<double>());
    return out;
  }
  throw UsageError(path + ": expected an array, a '" + metric + "' list, or a 'runs' list");
}

json metrics_json(const MetricSet& m) {
  return {{"mse", m.mse}, {"mae", m.mae}, {"rmse", m.rmse}, {"n_samples", m.n_samples}};
}

void add_common(CLI::App* cmd, Common& o, bool seed, bool delta, bool topk) {
  cmd->add_option("--config", o.config_path, "Run config (flat JSON)");
  cmd->add_option("--out", o.out, "Output directory");
  if (seed) cmd->add_option("--seed", o.seed, "Seed (overrides the seed list)");
  if (delta) cmd->add_option("--delta", o.delta, "Relative-error threshold for period matching");
  if (topk) cmd->add_option("--topk", o.topk, "Number of selected frequencies K");
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"freqlens: interpretable frequency-attribution forecasting"};
  app.require_subcommand(1);
  Common o;
  std::vector<std::string> checkpoints;
  std::string split = "test";
  std::size_t sample = 0;
  std::vector<std::string> compare_files;
  std::string metric = "mse";

  auto* synth = app.add_subcommand("synth", "Write a synthetic periodic series as CSV");
  add_common(synth, o, true, false, false);
  auto* train_cmd = app.add_subcommand("train", "Train one model per seed");
  add_common(train_cmd, o, true, false, true);
  auto* evaluate = app.add_subcommand("evaluate", "Metrics of a checkpoint on a split");
  add_common(evaluate, o, false, false, false);
  evaluate->add_option("--checkpoint", checkpoints, "Checkpoint file")->required();
  evaluate->add_option("--split", split, "train, val or test");
  auto* compare = app.add_subcommand("compare", "Paired t-test of two per-seed metric lists");
  compare->add_option("files", compare_files, "Two JSON metric files")->required()->expected(2);
  compare->add_option("--metric", metric, "Metric name in the files");
  compare->add_option("--out", o.out, "Output directory");
  auto* disc = app.add_subcommand("discover", "Match learned periods against known periods");
  add_common(disc, o, false, true, false);
  disc->add_option("--checkpoint", checkpoints, "Checkpoint files, one per seed")->required();
  auto* attr = app.add_subcommand("attribute", "Per-frequency attribution of one window");
  add_common(attr, o, false, false, false);
  attr->add_option("--checkpoint", checkpoints, "Checkpoint file")->required();
  attr->add_option("--sample", sample, "Window index within the split")->required();
  attr->add_option("--split", split, "train, val or test");
  auto* faith = app.add_subcommand("faithfulness", "Removal tests of top-k frequencies");
  add_common(faith, o, false, false, true);
  faith->add_option("--checkpoint", checkpoints, "Checkpoint file")->required();
  faith->add_option("--split", split, "train, val or test");
  auto* axioms = app.add_subcommand("verify-axioms", "Check A1-A4 and the Shapley oracle");
  add_common(axioms, o, true, false, true);
  axioms->add_option("--checkpoint", checkpoints, "Checkpoint file (random init when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed()) {
      RunConfig c = resolve(o);
      if (o.seed) c.synth_seed = *o.seed;
      const auto t = load_series(c);
      const fs::path path = fs::path(c.out_dir) / "series.csv";
      fs::create_directories(c.out_dir);
      write_csv(t, path.string());
      std::cout << "wrote " << path.string() << ": T=" << t.rows << " C=" << t.cols << " periods=";
      for (std::size_t i = 0; i < c.synth_periods.size(); ++i) std::cout << (i ? "," : "") << c.synth_periods[i];
      std::cout << '\n';
      return 0;
    }
    if (train_cmd->parsed()) {
      const RunConfig c = resolve(o);
      const auto d = prepare_data(c);
      write_file(fs::path(c.out_dir) / "config.json", run_config_to_json(c));
      for (auto seed : c.seeds) {
        const auto dir = train_seed(c, d, seed);
        const auto best = load_checkpoint((fs::path(dir) / "checkpoint.json").string());
        std::cout << "seed " << seed << ": best validation MSE " << evaluate_mse(best, d.val) << " (" << dir << ")\n";
      }
      return 0;
    }
    if (evaluate->parsed()) {
      const RunConfig c = resolve(o);
      const auto d = prepare_data(c);
      const auto m = load_checkpoint(checkpoints.at(0));
      check_compatible(m, c, d);
      const auto& w = d.split(split);
      const auto pred = predict(m, w);
      const auto metrics = compute_metrics(pred, w.targets, w.count);
      json j = metrics_json(metrics);
      j["split"] = split;
      j["checkpoint"] = checkpoints[0];
      j["seed"] = m.config.seed;
      j["target_variance"] = w.target_variance();
      const std::string text = j.dump(2);
      if (o.out) write_file(fs::path(*o.out) / ("evaluate_" + split + ".json"), text);
      std::cout << text << '\n';
      return 0;
    }
    if (compare->parsed()) {
      const auto a = load_metric_list(compare_files[0], metric);
      const auto b = load_metric_list(compare_files[1], metric);
      const auto r = paired_ttest(a, b);
      const json j = {{"n", r.n},       {"mean_diff", r.mean_diff}, {"t", r.t},
                      {"p", r.p},       {"cohens_d", std::isinf(r.cohens_d) ? json(r.cohens_d > 0 ? "inf" : "-inf") : json(r.cohens_d)},
                      {"degenerate_variance", r.degenerate_variance}, {"metric", metric}};
      if (o.out) write_file(fs::path(*o.out) / "compare.json", j.dump(2));
      std::cout << j.dump(2) << '\n';
      return 0;
    }
    if (disc->parsed()) {
      const RunConfig c = resolve(o);
      const auto d = prepare_data(c);
      std::vector<std::pair<std::uint64_t, ModelState>> runs;
      for (const auto& p : checkpoints) {
        auto m = load_checkpoint(p);
        check_compatible(m, c, d);
        runs.emplace_back(m.config.seed, std::move(m));
      }
      std::vector<KnownPeriod> known;
      for (const auto& [name, seconds] : c.known_periods) known.push_back({name, seconds});
      const auto report = discover(runs, &d.test, known, c.step_duration, c.delta);
      json j = json::parse(report.to_json());
      std::vector<double> train_part(d.normalized.values.begin(),
                                     d.normalized.values.begin() + static_cast<std::ptrdiff_t>(d.splits.train.end * d.raw.cols));
      std::vector<double> channel0;
      for (std::size_t t = 0; t < d.splits.train.end; ++t) channel0.push_back(train_part[t * d.raw.cols]);
      j["fft_baseline_periods_steps"] = fft_peak_detection(channel0, known.size());
      fs::create_directories(c.out_dir);
      write_file(fs::path(c.out_dir) / "discovery.json", j.dump(2));
      write_file(fs::path(c.out_dir) / "discovery.csv", report.to_csv());
      for (const auto& s : report.summary) {
        std::cout << s.name << ": matched in " << s.seeds_matched << "/" << report.seeds.size() << " seeds";
        if (s.seeds_matched) std::cout << ", mean " << s.mean / c.step_duration << " steps";
        std::cout << '\n';
      }
      return 0;
    }
    if (attr->parsed()) {
      const RunConfig c = resolve(o);
      const auto d = prepare_data(c);
      const auto m = load_checkpoint(checkpoints.at(0));
      check_compatible(m, c, d);
      const auto& w = d.split(split);
      if (sample >= w.count) {
        throw UsageError("sample index " + std::to_string(sample) + " out of range; split '" + split + "' has " +
                         std::to_string(w.count) + " windows");
      }
      const auto report = attribute(forward(m, w.batch({sample}).first), m.config);
      const fs::path path = fs::path(c.out_dir) / ("attribution_" + split + "_" + std::to_string(sample) + ".json");
      write_file(path, attribution_to_json(report));
      std::cout << "wrote " << path.string() << " (" << report.samples[0].frequencies.size() << " frequencies)\n";
      return 0;
    }
    if (faith->parsed()) {
      RunConfig c = resolve(o);
      const auto m = load_checkpoint(checkpoints.at(0));
      c.model.top_k = m.config.top_k;
      const auto d = prepare_data(c);
      check_compatible(m, c, d);
      std::vector<std::size_t> ks = c.faithfulness_k;
      if (o.topk) {
        ks.clear();
        for (std::size_t k = 1; k <= *o.topk; ++k) ks.push_back(k);
      }
      std::erase_if(ks, [&](std::size_t k) { return k > m.config.top_k; });
      const auto res = faithfulness_test(m, d.split(split), ks);
      const std::string text = faithfulness_to_json(res);
      write_file(fs::path(c.out_dir) / "faithfulness.json", text);
      std::cout << text << '\n';
      return 0;
    }
    if (axioms->parsed()) {
      RunConfig c = resolve(o);
      ModelState m;
      if (checkpoints.empty()) {
        ModelConfig mc = c.model;
        mc.seed = c.seeds.at(0);
        if (c.data_path.empty()) mc.channels = 1;
        m = init_model(mc);
      } else {
        m = load_checkpoint(checkpoints[0]);
      }
      Rng rng(c.seeds.at(0));
      const std::size_t B = 8;
      std::vector<double> x(B * m.config.input_len * m.config.channels);
      for (auto& v : x) v = rng.normal();
      const auto rep = verify_axioms(m, Tensor({B, m.config.input_len, m.config.channels}, x));
      for (const auto& chk : rep.checks) {
        std::cout << (chk.passed ? "PASS " : "FAIL ") << chk.name << " (max deviation " << chk.max_deviation << ")\n";
      }
      if (o.out) write_file(fs::path(*o.out) / "axioms.json", rep.to_json());
      return rep.all_passed() ? 0 : 2;
    }
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace freqlens
