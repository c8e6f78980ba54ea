#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cmath>

#include "freqlens/cli.hpp"
#include "freqlens/interpret.hpp"
#include "freqlens/stats.hpp"
#include "freqlens/train.hpp"

namespace py = pybind11;
using namespace freqlens;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array to_numpy(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

Array to_numpy(const std::vector<double>& v, std::vector<py::ssize_t> shape) {
  Array out(shape);
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

Tensor from_numpy(const Array& a) {
  ad::Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

SeriesTable table_from_numpy(const Array& a, double step_duration) {
  if (a.ndim() != 1 && a.ndim() != 2) throw std::invalid_argument("series must be 1-D [T] or 2-D [T, C]");
  SeriesTable t;
  t.rows = static_cast<std::size_t>(a.shape(0));
  t.cols = a.ndim() == 2 ? static_cast<std::size_t>(a.shape(1)) : 1;
  t.values.assign(a.data(), a.data() + a.size());
  for (std::size_t c = 0; c < t.cols; ++c) t.channels.push_back("c" + std::to_string(c));
  t.step_duration = step_duration;
  return t;
}

py::dict forward_dict(const ModelState& m, const Array& x) {
  const auto out = forward(m, from_numpy(x));
  py::list contributions;
  for (const auto& c : out.contributions) contributions.append(to_numpy(c));
  py::dict d;
  d["y_hat"] = to_numpy(out.y_hat);
  d["y_freq"] = to_numpy(out.y_freq);
  d["y_res"] = to_numpy(out.y_res);
  d["alpha"] = out.alpha.item();
  d["frequencies"] = to_numpy(out.frequencies);
  d["soft_weights"] = to_numpy(out.soft_weights);
  d["selected"] = out.selected;
  d["contributions"] = contributions;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "FreqLens: interpretable forecasting with learnable frequency bases";

  py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);

  py::enum_<FreqMode>(m, "FreqMode").value("Learnable", FreqMode::Learnable).value("FixedPrior", FreqMode::FixedPrior);
  py::enum_<FusionMode>(m, "FusionMode")
      .value("Learned", FusionMode::Learned)
      .value("FrequencyOnly", FusionMode::FrequencyOnly);

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("input_len", &ModelConfig::input_len)
      .def_readwrite("horizon", &ModelConfig::horizon)
      .def_readwrite("channels", &ModelConfig::channels)
      .def_readwrite("hidden", &ModelConfig::hidden)
      .def_readwrite("num_bases", &ModelConfig::num_bases)
      .def_readwrite("top_k", &ModelConfig::top_k)
      .def_readwrite("scorer_hidden", &ModelConfig::scorer_hidden)
      .def_readwrite("freq_mode", &ModelConfig::freq_mode)
      .def_readwrite("prior_periods", &ModelConfig::prior_periods)
      .def_readwrite("fusion", &ModelConfig::fusion)
      .def_readwrite("seed", &ModelConfig::seed)
      .def("validate", &ModelConfig::validate);

  py::class_<ParameterCounts>(m, "ParameterCounts")
      .def_readonly("input_proj", &ParameterCounts::input_proj)
      .def_readonly("bank", &ParameterCounts::bank)
      .def_readonly("scorer", &ParameterCounts::scorer)
      .def_readonly("heads", &ParameterCounts::heads)
      .def_readonly("residual", &ParameterCounts::residual)
      .def_readonly("fusion", &ParameterCounts::fusion)
      .def_property_readonly("total", &ParameterCounts::total);
  m.def("parameter_counts", py::overload_cast<const ModelConfig&>(&parameter_counts));

  py::class_<ModelState>(m, "Model")
      .def_readonly("config", &ModelState::config)
      .def_property_readonly("frequencies", [](const ModelState& s) { return to_numpy(compute_frequencies(s.bank)); })
      .def_property_readonly("alpha", [](const ModelState& s) { return 1.0 / (1.0 + std::exp(-s.fusion_logit.item())); })
      .def("parameter_counts", &ModelState::parameter_counts)
      .def("forward", &forward_dict, py::arg("x"), "Evaluation-mode forward on x [B, L, C].")
      .def("to_json", [](const ModelState& s) { return checkpoint_to_string(s); })
      .def_static("from_json", &checkpoint_from_string);
  m.def("init_model", &init_model);
  m.def("save_checkpoint", &save_checkpoint);
  m.def("load_checkpoint", &load_checkpoint);

  py::class_<WindowSet>(m, "WindowSet")
      .def_readonly("count", &WindowSet::count)
      .def_readonly("input_len", &WindowSet::input_len)
      .def_readonly("horizon", &WindowSet::horizon)
      .def_readonly("channels", &WindowSet::channels)
      .def("inputs", [](const WindowSet& w) { return to_numpy(w.all().first); })
      .def("targets", [](const WindowSet& w) { return to_numpy(w.all().second); })
      .def("target_variance", &WindowSet::target_variance);
  m.def(
      "make_windows",
      [](const Array& series, std::size_t L, std::size_t H, std::size_t begin, std::optional<std::size_t> end) {
        const auto t = table_from_numpy(series, 3600);
        return make_windows(t, L, H, {begin, end.value_or(t.rows)});
      },
      py::arg("series"), py::arg("input_len"), py::arg("horizon"), py::arg("begin") = 0, py::arg("end") = py::none());

  m.def(
      "synth_series",
      [](const std::vector<double>& periods, std::vector<double> amplitudes, std::vector<double> phases, double slope,
         double noise_std, std::size_t length, std::uint64_t seed) {
        amplitudes.resize(periods.size(), 1.0);
        phases.resize(periods.size(), 0.0);
        SynthSpec s{.slope = slope, .noise_std = noise_std, .length = length, .seed = seed};
        for (std::size_t i = 0; i < periods.size(); ++i) s.components.push_back({periods[i], amplitudes[i], phases[i]});
        return to_numpy(synth_series(s).values, {static_cast<py::ssize_t>(length)});
      },
      py::arg("periods") = std::vector<double>{24, 12}, py::arg("amplitudes") = std::vector<double>{1.0, 0.5},
      py::arg("phases") = std::vector<double>{}, py::arg("slope") = 0.0, py::arg("noise_std") = 0.1,
      py::arg("length") = 2000, py::arg("seed") = 0);

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("base_lr", &TrainConfig::base_lr)
      .def_readwrite("freq_lr_multiplier", &TrainConfig::freq_lr_multiplier)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("patience", &TrainConfig::patience)
      .def_readwrite("tau_start", &TrainConfig::tau_start)
      .def_readwrite("tau_end", &TrainConfig::tau_end)
      .def_readwrite("max_batches_per_epoch", &TrainConfig::max_batches_per_epoch)
      .def_readwrite("seed", &TrainConfig::seed);
  py::class_<LossWeights>(m, "LossWeights")
      .def(py::init<>())
      .def_readwrite("lambda_div", &LossWeights::lambda_div)
      .def_readwrite("lambda_recon", &LossWeights::lambda_recon)
      .def_readwrite("lambda_sparse", &LossWeights::lambda_sparse)
      .def_readwrite("epsilon_div", &LossWeights::epsilon_div);
  m.def(
      "train",
      [](const ModelState& model, const WindowSet& tr, const WindowSet& val, const TrainConfig& cfg,
         const LossWeights& w) {
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train(model, tr, val, cfg, w);
        }
        return py::make_tuple(r.best, r.best_val_mse, r.best_epoch, train_log_to_jsonl(r.log));
      },
      py::arg("model"), py::arg("train_set"), py::arg("val_set"), py::arg("config") = TrainConfig{},
      py::arg("weights") = LossWeights{}, "Returns (best_model, best_val_mse, best_epoch, log_jsonl).");
  m.def("evaluate_mse", &evaluate_mse, py::arg("model"), py::arg("windows"), py::arg("batch_size") = 256);
  m.def("diversity_loss", [](const std::vector<double>& f, double eps) {
    return diversity_loss(Tensor({f.size()}, f), eps).item();
  }, py::arg("frequencies"), py::arg("epsilon") = 1e-6);

  m.def("fft_peak_detection", &fft_peak_detection, py::arg("series"), py::arg("top_k"));
  m.def(
      "match_known_periods",
      [](const std::vector<double>& learned, const std::map<std::string, double>& known, double delta) {
        std::vector<KnownPeriod> k;
        for (const auto& [name, p] : known) k.push_back({name, p});
        py::list out;
        for (const auto& r : match_known_periods(learned, k, delta)) {
          py::dict d;
          d["name"] = r.name;
          d["known"] = r.known;
          d["learned"] = r.learned;
          d["relative_error"] = r.relative_error;
          d["matched"] = r.matched;
          out.append(d);
        }
        return out;
      },
      py::arg("learned"), py::arg("known"), py::arg("delta") = 0.15);
  m.def("shapley_bruteforce", py::overload_cast<std::size_t, const Game&>(&shapley_bruteforce), py::arg("players"),
        py::arg("game"), "Exact Shapley values of game(mask) -> list of floats.");
  m.def(
      "verify_axioms",
      [](const ModelState& model, const Array& x, double tol) {
        py::list out;
        for (const auto& c : verify_axioms(model, from_numpy(x), tol).checks) {
          py::dict d;
          d["name"] = c.name;
          d["passed"] = c.passed;
          d["max_deviation"] = c.max_deviation;
          out.append(d);
        }
        return out;
      },
      py::arg("model"), py::arg("x"), py::arg("tolerance") = 1e-9);
  m.def(
      "faithfulness_test",
      [](const ModelState& model, const WindowSet& w, const std::vector<std::size_t>& ks) {
        py::list out;
        for (const auto& r : faithfulness_test(model, w, ks)) {
          py::dict d;
          d["k"] = r.k;
          d["mean_change"] = r.mean_change;
          d["correlation"] = r.correlation;
          d["max_impact_error"] = r.max_impact_error;
          out.append(d);
        }
        return out;
      },
      py::arg("model"), py::arg("windows"), py::arg("k_list") = std::vector<std::size_t>{1, 2, 4});

  m.def(
      "paired_ttest",
      [](const std::vector<double>& a, const std::vector<double>& b) {
        const auto r = paired_ttest(a, b);
        py::dict d;
        d["n"] = r.n;
        d["mean_diff"] = r.mean_diff;
        d["t"] = r.t;
        d["p"] = r.p;
        d["cohens_d"] = r.cohens_d;
        return d;
      },
      py::arg("a"), py::arg("b"));
  m.def(
      "compute_metrics",
      [](const std::vector<double>& pred, const std::vector<double>& target) {
        const auto r = compute_metrics(pred, target);
        py::dict d;
        d["mse"] = r.mse;
        d["mae"] = r.mae;
        d["rmse"] = r.rmse;
        return d;
      },
      py::arg("pred"), py::arg("target"));
  m.def("student_t_two_sided", &student_t_two_sided, py::arg("t"), py::arg("dof"));

  m.def(
      "run_cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "freqlens");
        std::vector<char*> argv;
        for (auto& a : args) argv.push_back(a.data());
        py::gil_scoped_release release;
        return run_cli(static_cast<int>(argv.size()), argv.data());
      },
      py::arg("args"), "Runs the command-line tool in-process; returns its exit code.");
}
