// Acceptance suite: one PASS/FAIL/SKIP line per criterion. Exits nonzero when any criterion fails.

#include "dhi/nn/layers.hpp"
#include "dhi/pipeline.hpp"
#include "oracles/oracles.hpp"
#include "test_util.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

using namespace dhi;
using nlohmann::json;
namespace fs = std::filesystem;
using T = nn::Tensor3<Real>;

namespace {

enum class Verdict { Pass, Fail, Skip };

struct Outcome {
  Verdict verdict;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& title, const Outcome& o) {
  const char* tag = o.verdict == Verdict::Pass ? "PASS" : o.verdict == Verdict::Fail ? "FAIL" : "SKIP";
  if (o.verdict == Verdict::Fail) ++failures;
  std::printf("%s criterion %d: %s (%s)\n", tag, id, title.c_str(), o.detail.c_str());
  std::fflush(stdout);
}

Outcome verdict(bool ok, const std::string& detail) { return {ok ? Verdict::Pass : Verdict::Fail, detail}; }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---------------------------------------------------------------------------

Outcome shapes() {
  const auto t0 = std::chrono::steady_clock::now();
  skipae::SkipAEModel model(skipae::SkipAEConfig{}, 1);
  std::vector<skipae::ShapeRecord> trace;
  model.forward(T(2, 1, 1280), false, &trace);
  const std::vector<std::pair<Index, Index>> expect{{8, 636},  {16, 314}, {32, 153}, {4896, 1},
                                                    {32, 1},   {4896, 1}, {32, 153}, {16, 314},
                                                    {16, 314}, {8, 636},  {8, 636},  {1, 1280}};
  bool ok = trace.size() == expect.size();
  std::string mismatch;
  for (std::size_t i = 0; ok && i < expect.size(); ++i) {
    if (trace[i].channels != expect[i].first || trace[i].length != expect[i].second) {
      ok = false;
      mismatch = trace[i].layer;
    }
  }
  const double secs = seconds_since(t0);
  ok = ok && secs < 1.0;
  return verdict(ok, std::to_string(trace.size()) + " layer outputs" +
                         (mismatch.empty() ? "" : ", mismatch at " + mismatch) + ", " + fmt("%.3f s", secs));
}

// ---------------------------------------------------------------------------

struct GradCheck {
  double worst = 0.0;
  std::string worst_name;

  void add(const std::string& name, const Vector& analytic, const Vector& numeric) {
    const double e = oracle::relative_error(analytic, numeric);
    if (e >= worst) {
      worst = e;
      worst_name = name;
    }
  }

  template <typename Layer, typename Forward>
  void layer(const std::string& name, Layer& l, T x, Forward forward) {
    Rng rng(99);
    const T probe = forward(l, x);
    const T r = testutil::randn_tensor(rng, probe.batch(), probe.channels(), probe.length());
    nn::ParameterRefs<Real> params;
    if constexpr (requires { l.parameters(); }) params = l.parameters();
    nn::zero_grads(params);
    forward(l, x);
    const T dx = l.backward(r);
    auto loss = [&] { return forward(l, x).data().dot(r.data()); };
    add(name + " input", dx.data(), oracle::numeric_gradient(x.data(), loss, 1e-4));
    for (auto* p : params) {
      const Vector a = p->grad;
      add(name + " " + p->name, a, oracle::numeric_gradient(p->values, loss, 1e-4));
    }
  }

  void params(const std::string& name, nn::ParameterRefs<Real> ps, const std::function<double()>& loss,
              double step) {
    for (auto* p : ps) {
      const Vector a = p->grad;
      add(name + " " + p->name, a, oracle::numeric_gradient(p->values, loss, step));
    }
  }
};

Outcome gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  GradCheck g;
  Rng rng(7);
  const T x = testutil::randn_tensor(rng, 3, 2, 7);
  auto plain = [](auto& l, const T& in) { return l.forward(in); };

  nn::Conv1d<Real> conv("conv", 2, 3, 3, 2);
  conv.reset_parameters(rng, 1.0);
  g.layer("conv1d", conv, x, plain);
  nn::DeConv1d<Real> deconv("deconv", 2, 3, 3, 2);
  deconv.reset_parameters(rng, 1.0);
  g.layer("deconv1d", deconv, x, plain);
  nn::Dense<Real> dense("dense", 14, 4);
  dense.reset_parameters(rng, 1.0);
  g.layer("dense", dense, x.reshaped(14, 1), plain);
  nn::BatchNorm1d<Real> bn("bn", 2);
  bn.gamma().values = testutil::randn(rng, 2);
  bn.beta().values = testutil::randn(rng, 2);
  g.layer("batchnorm", bn, x, [](auto& l, const T& in) { return l.forward(in, true); });
  nn::Activation<Real> leaky("leaky", nn::LayerSpec::leaky_relu(0.01));
  g.layer("leaky relu", leaky, x, plain);
  nn::Activation<Real> relu("relu", nn::LayerSpec::relu());
  g.layer("relu", relu, x, plain);
  nn::AvgPool1dSame<Real> pool("pool", 3);
  g.layer("avgpool", pool, x, plain);
  nn::Flatten<Real> flat("flat");
  g.layer("flatten", flat, x, plain);

  {
    T a = testutil::randn_tensor(rng, 3, 2, 7);
    T b = testutil::randn_tensor(rng, 3, 2, 7);
    nn::ConcatConv1x1<Real> cat("cat", 4, 3);
    cat.reset_parameters(rng, 1.0);
    const T r = testutil::randn_tensor(rng, 3, 3, 7);
    nn::zero_grads(cat.parameters());
    cat.forward(a, b);
    const auto d = cat.backward(r);
    auto loss = [&] { return cat.forward(a, b).data().dot(r.data()); };
    g.add("concat a", d.a.data(), oracle::numeric_gradient(a.data(), loss, 1e-4));
    g.add("concat b", d.b.data(), oracle::numeric_gradient(b.data(), loss, 1e-4));
    g.params("concat", cat.parameters(), loss, 1e-4);
  }

  {
    skipae::SkipAEConfig c;
    c.input_length = 70;
    c.latent_dim = 4;
    c.channels = {2, 3, 4};
    c.kernel_size = 4;
    c.stride = 2;
    skipae::SkipAEModel model(c, 11);
    const T in = testutil::randn_tensor(rng, 3, 1, 70);
    nn::zero_grads(model.parameters());
    model.backward(skipae::reconstruction_loss_grad(in, model.forward(in, true)));
    Vector analytic(0);
    Vector numeric(0);
    auto loss = [&] { return skipae::reconstruction_loss(in, model.forward(in, true)); };
    for (auto* p : model.parameters()) {
      const Vector a = p->grad;
      const Vector n = oracle::numeric_gradient(p->values, loss, 1e-5);
      analytic.conservativeResize(analytic.size() + a.size());
      analytic.tail(a.size()) = a;
      numeric.conservativeResize(numeric.size() + n.size());
      numeric.tail(n.size()) = n;
    }
    g.add("skipae model", analytic, numeric);
  }

  for (auto side : {hi::FrozenSide::Inputs, hi::FrozenSide::Target}) {
    hi::HiConfig c;
    c.feature_dim = 4;
    c.hidden = {3};
    c.pool_window = 3;
    c.weights.lookback = 4;
    c.frozen_side = side;
    hi::HiModel model(c, 52);
    Matrix batch(4, 5);
    Matrix s1(4, 12);
    Matrix s2(4, 9);
    for (auto* m : {&batch, &s1, &s2})
      for (Index j = 0; j < m->cols(); ++j) m->col(j) = testutil::randn(rng, 4);
    const Vector f1 = model.encode(s1) + 0.1 * testutil::randn(rng, 12);
    const Vector f2 = model.encode(s2) + 0.1 * testutil::randn(rng, 9);
    const std::vector<hi::SequenceTerm> seqs{{&s1, &f1}, {&s2, &f2}};
    nn::zero_grads(model.parameters());
    hi::combined_objective(model, batch, seqs, true);
    g.params(side == hi::FrozenSide::Inputs ? "combined loss (frozen inputs)" : "combined loss (frozen targets)",
             model.parameters(), [&] { return hi::combined_objective(model, batch, seqs, false).total; }, 1e-6);
  }

  const double secs = seconds_since(t0);
  return verdict(g.worst < 1e-4 && secs < 30.0,
                 "worst relative error " + fmt("%.2e", g.worst) + " at " + g.worst_name + ", " +
                     fmt("%.2f s", secs));
}

// ---------------------------------------------------------------------------

struct PublishedRow {
  const char* method;
  int task;
  double mon, tred, rob, hs;
};

constexpr std::array<PublishedRow, 24> kPublished{{
    {"RMS", 1, 0.006, 0.537, 0.963, 0.502},       {"RMS", 2, 0.055, 0.373, 0.832, 0.420},
    {"RMS", 3, 0.028, 0.453, 0.886, 0.456},       {"P-Entropy", 1, 0.027, 0.280, 0.553, 0.287},
    {"P-Entropy", 2, 0.062, 0.263, 0.598, 0.308}, {"P-Entropy", 3, 0.036, 0.395, 0.823, 0.418},
    {"ISOMAP", 1, 0.056, 0.854, 0.963, 0.625},    {"ISOMAP", 2, 0.101, 0.628, 0.942, 0.557},
    {"ISOMAP", 3, 0.068, 0.775, 0.922, 0.588},    {"KPCA", 1, 0.026, 0.886, 0.864, 0.592},
    {"KPCA", 2, 0.103, 0.593, 0.946, 0.547},      {"KPCA", 3, 0.026, 0.875, 0.911, 0.604},
    {"CEEMDAN", 1, 0.025, 0.332, 0.807, 0.388},   {"CEEMDAN", 2, 0.064, 0.333, 0.926, 0.441},
    {"CEEMDAN", 3, 0.038, 0.368, 0.910, 0.439},   {"VAE", 1, 0.028, 0.651, 0.975, 0.551},
    {"VAE", 2, 0.097, 0.556, 0.981, 0.545},       {"VAE", 3, 0.057, 0.852, 0.973, 0.627},
    {"SSAE", 1, 0.017, 0.505, 0.893, 0.472},      {"SSAE", 2, 0.042, 0.343, 0.959, 0.447},
    {"SSAE", 3, 0.041, 0.779, 0.803, 0.541},      {"Ours", 1, 0.069, 0.854, 0.983, 0.635},
    {"Ours", 2, 0.105, 0.639, 0.984, 0.576},      {"Ours", 3, 0.074, 0.899, 0.973, 0.649},
}};

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

Outcome metric_oracles() {
  int checks = 0;
  std::vector<std::string> failed;
  auto expect = [&](bool ok, const std::string& what) {
    ++checks;
    if (!ok) failed.push_back(what);
  };
  auto near = [](double a, double b, double tol) { return std::abs(a - b) <= tol; };

  expect(metrics::monotonicity(vec({1, 2, 3, 4, 5})) == 1.0, "mon all increases");
  expect(metrics::monotonicity(vec({1, 2, 1, 2, 1})) == 0.0, "mon balanced");
  expect(near(metrics::monotonicity(vec({1, 2, 3, 1})), 1.0 / 3.0, 1e-15), "mon two up one down");
  expect(near(metrics::trendability(Vector::LinSpaced(20, 3.0, -1.0).eval()), 1.0, 1e-12), "tred linear");
  expect(std::abs(metrics::trendability(vec({0, 1, 2, 3, 4, 3, 2, 1, 0}))) < 1e-12, "tred tent");
  Rng rng(32);
  for (int trial = 0; trial < 20; ++trial) {
    const Vector y = testutil::randn(rng, 40);
    const Vector t = Vector::LinSpaced(40, 1.0, 40.0);
    expect(near(metrics::trendability(y, t), std::abs(oracle::pearson(y, t)), 1e-12), "tred oracle");
  }
  expect(metrics::robustness(vec({0.2, 0.5, 0.9}), vec({0.2, 0.5, 0.9})) == 1.0, "rob equal to trend");
  expect(near(metrics::robustness(vec({1.0}), vec({0.0})), std::exp(-1.0), 1e-15), "rob single point");
  expect(metrics::hybrid_scale(1, 1, 1) == 1.0 && metrics::hybrid_scale(0, 0, 0) == 0.0, "hs extremes");
  expect(metrics::rmse(vec({1, 2, 3}), vec({1, 2, 3})) == 0.0, "rmse identical");
  expect(near(metrics::rmse(vec({1.7, 2.7, 3.7, 4.7}), vec({1, 2, 3, 4})), 0.7, 1e-12), "rmse offset");
  expect(metrics::predictability_from_mae(0.0) == 1.0, "pred at zero");
  expect(near(metrics::predictability_from_mae(0.3, 0.3), 0.5, 1e-15), "pred at limit");
  expect(near(metrics::predictability_from_mae(0.6, 0.3), 0.25, 1e-15), "pred at twice the limit");
  expect(near(metrics::smooth_trend(Vector::Constant(30, 0.25).eval())[7], 0.25, 1e-15), "smoothing constant");

  int cells = 0;
  for (const auto& row : kPublished) {
    ++cells;
    expect(std::abs(metrics::hybrid_scale(row.mon, row.tred, row.rob) - row.hs) <= 0.001,
           std::string(row.method) + " task " + std::to_string(row.task));
  }
  std::string detail = std::to_string(checks - static_cast<int>(failed.size())) + "/" + std::to_string(checks) +
                       " checks, " + std::to_string(cells) + " published HS cells";
  if (!failed.empty()) detail += ", first failure: " + failed.front();
  return verdict(failed.empty(), detail);
}

// ---------------------------------------------------------------------------

Outcome rul_arithmetic() {
  const double direct = prognosis::rul_accuracy(155, 156);
  Vector forecast = Vector::Zero(200);
  Vector truth = Vector::Zero(200);
  forecast.tail(45).setOnes();
  truth.tail(46).setOnes();
  const auto r = prognosis::estimate_rul(forecast, prognosis::SplitSpec{}, 1, &truth);
  const bool ok = std::abs(direct - 0.9935) <= 0.0001 && r.accuracy && *r.accuracy == direct &&
                  *r.rul_actual == 155 && *r.rul_estimated == 156;
  return verdict(ok, "accuracy " + fmt("%.4f%%", 100.0 * direct));
}

// ---------------------------------------------------------------------------

Outcome decomposition_identity() {
  Rng rng(2024);
  const int trials = 10000;
  int exact = 0;
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    const Vector w = testutil::randn(rng, 20) * std::exp(2.0 * rng.normal());
    const auto d = hi::decompose(w, 9);
    const Vector back = d.trend + d.seasonal;
    if (back == w) {
      ++exact;
    } else {
      worst = std::max(worst, ((back - w).cwiseAbs().array() / w.cwiseAbs().array().max(1e-300)).maxCoeff());
    }
  }
  return verdict(exact == trials, std::to_string(exact) + "/" + std::to_string(trials) +
                                      " windows bit-exact, worst relative residual " + fmt("%.2e", worst));
}

// ---------------------------------------------------------------------------

json synthetic_config(std::uint64_t seed, const fs::path& out) {
  std::ifstream in(fs::path(DHI_SOURCE_DIR) / "configs" / "synthetic.json");
  json j = json::parse(in);
  j["seed"] = seed;
  j["out"] = out.string();
  return j;
}

struct RunSummary {
  pipeline::ExperimentConfig config;
  double seconds = 0.0;
  std::optional<metrics::MetricReport> test_metrics;
  std::optional<pipeline::ForecastRow> forecast;
};

RunSummary run_pipeline(const json& j) {
  RunSummary s;
  s.config = pipeline::config_from_json(j);
  const auto t0 = std::chrono::steady_clock::now();
  pipeline::cmd_prepare(s.config);
  pipeline::cmd_train(s.config);
  pipeline::cmd_construct(s.config);
  const auto rows = pipeline::cmd_evaluate(s.config);
  const auto forecasts = pipeline::cmd_forecast(s.config);
  pipeline::cmd_report(s.config);
  s.seconds = seconds_since(t0);
  const std::string test_id = s.config.test.front().id;
  for (const auto& r : rows) {
    if (r.method == "ours" && r.bearing == test_id) s.test_metrics = r.report;
  }
  for (const auto& f : forecasts) {
    if (f.method == "ours" && f.bearing == test_id) s.forecast = f;
  }
  return s;
}

Outcome end_to_end(const RunSummary& s) {
  if (!s.test_metrics || !s.forecast) return {Verdict::Fail, "no result row for the learned HI"};
  Index windows = 0;
  for (const auto* list : {&s.config.train, &s.config.test})
    for (const auto& b : *list) windows += b.synth.n_windows;
  const auto& m = *s.test_metrics;
  const auto& f = *s.forecast;
  const double acc = f.accuracy_to_end.value_or(-1.0);
  std::vector<std::string> missed;
  if (windows != 600) missed.push_back("window count");
  if (!(s.seconds < 600.0)) missed.push_back("runtime");
  if (!(m.mon >= 0.05)) missed.push_back("Mon");
  if (!(m.tred >= 0.90)) missed.push_back("Tred");
  if (!(m.rob >= 0.95)) missed.push_back("Rob");
  if (!(f.raw.pred >= 0.90)) missed.push_back("Pred");
  if (!(f.raw.rmse <= 0.08)) missed.push_back("RMSE");
  if (!(acc >= 0.95)) missed.push_back("RUL accuracy");
  std::ostringstream d;
  d << windows << " windows, " << fmt("%.1f s", s.seconds) << "; Mon " << fmt("%.3f", m.mon) << ", Tred "
    << fmt("%.3f", m.tred) << ", Rob " << fmt("%.3f", m.rob) << ", Pred " << fmt("%.3f", f.raw.pred) << ", RMSE "
    << fmt("%.4f", f.raw.rmse) << ", RUL est "
    << (f.prognosis.rul_estimated ? std::to_string(*f.prognosis.rul_estimated) : "none") << " vs failure "
    << f.rul_to_end << " (accuracy " << (acc >= 0.0 ? fmt("%.3f", acc) : "undefined") << ")";
  if (!missed.empty()) {
    d << "; below threshold:";
    for (const auto& x : missed) d << " " << x;
  }
  return verdict(missed.empty(), d.str());
}

Outcome determinism(const RunSummary& first, const fs::path& out) {
  const auto second = run_pipeline(synthetic_config(first.config.seed, out));
  const pipeline::RunPaths a{first.config.out};
  const pipeline::RunPaths b{second.config.out};
  const bool metrics_same = testutil::read_file(a.metrics_csv()) == testutil::read_file(b.metrics_csv());
  const bool forecast_same = testutil::read_file(a.forecast_csv()) == testutil::read_file(b.forecast_csv());
  return verdict(metrics_same && forecast_same,
                 std::string("metrics.csv ") + (metrics_same ? "identical" : "differs") + ", forecast.csv " +
                     (forecast_same ? "identical" : "differs"));
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Outcome ablation_ordering(const RunSummary& seed1, const fs::path& root) {
  std::vector<double> hs_full;
  std::vector<double> hs_ablated;
  std::vector<double> pred_full;
  std::vector<double> pred_ablated;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    for (bool enabled : {true, false}) {
      std::optional<RunSummary> run;
      if (seed == 1 && enabled) {
        run = seed1;
      } else {
        json j = synthetic_config(seed, root / ((enabled ? "full-" : "nopred-") + std::to_string(seed)));
        j["evaluation"]["methods"] = {"ours"};
        j["ablation"]["prediction_block_enabled"] = enabled;
        run = run_pipeline(j);
      }
      if (!run->test_metrics || !run->forecast) return {Verdict::Fail, "missing result row"};
      (enabled ? hs_full : hs_ablated).push_back(run->test_metrics->hs);
      (enabled ? pred_full : pred_ablated).push_back(run->forecast->raw.pred);
    }
  }
  const double hf = median(hs_full);
  const double ha = median(hs_ablated);
  const double pf = median(pred_full);
  const double pa = median(pred_ablated);
  return verdict(hf >= ha && pf >= pa, "median HS " + fmt("%.4f", hf) + " vs " + fmt("%.4f", ha) +
                                           ", median Pred " + fmt("%.4f", pf) + " vs " + fmt("%.4f", pa));
}

// ---------------------------------------------------------------------------

std::optional<fs::path> find_bearing_dir(const fs::path& root, const std::string& name) {
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_directory() && e.path().filename() == name) return e.path();
  }
  return std::nullopt;
}

Outcome phm_task1(const fs::path& out) {
  const char* env = std::getenv("DHI_PHM2012_DIR");
  if (env == nullptr || !fs::is_directory(env)) return {Verdict::Skip, "DHI_PHM2012_DIR not set to a dataset directory"};
  json train = json::array();
  for (int k = 2; k <= 7; ++k) {
    const std::string name = "Bearing1_" + std::to_string(k);
    const auto dir = find_bearing_dir(env, name);
    if (!dir) return {Verdict::Skip, name + " not found under " + std::string(env)};
    train.push_back({{"id", name}, {"format", "pronostia"}, {"path", dir->string()}});
  }
  const auto test_dir = find_bearing_dir(env, "Bearing1_1");
  if (!test_dir) return {Verdict::Skip, "Bearing1_1 not found under " + std::string(env)};
  const json j{{"seed", 1},
               {"out", out.string()},
               {"data", {{"train", train}, {"test", {{{"id", "Bearing1_1"}, {"format", "pronostia"}, {"path", test_dir->string()}}}}}},
               {"forecast", {{"test_len", 150}, {"threshold", 0.75}}}};
  const auto s = run_pipeline(j);
  if (!s.test_metrics) return {Verdict::Fail, "no result row for the learned HI"};
  const auto series = hi::read_hi_csv(pipeline::RunPaths{s.config.out}.hi_dir("ours") / "Bearing1_1.csv");
  const bool in_range = series.values.minCoeff() >= 0.0 && series.values.maxCoeff() <= 1.0;
  const auto& m = *s.test_metrics;
  return verdict(in_range && m.tred >= 0.6 && m.hs >= 0.5 && s.seconds < 7200.0,
                 "Tred " + fmt("%.3f", m.tred) + ", HS " + fmt("%.3f", m.hs) + ", " + fmt("%.0f s", s.seconds) +
                     (in_range ? "" : ", HI outside [0, 1]"));
}

}  // namespace

int main() {
  set_warning_handler([](const std::string&) {});
  const fs::path root = fs::temp_directory_path() / "dhi-acceptance";
  fs::remove_all(root);

  report(1, "layer output shapes", shapes());
  report(2, "analytic gradients match central differences", gradients());
  report(3, "metric oracles and published HS cells", metric_oracles());
  report(4, "RUL accuracy arithmetic", rul_arithmetic());
  report(5, "trend plus seasonal reconstructs the window bit-exactly", decomposition_identity());

  const auto run = run_pipeline(synthetic_config(1, root / "synthetic-1"));
  report(6, "end-to-end synthetic run", end_to_end(run));
  report(7, "prediction block ablation ordering over 5 seeds", ablation_ordering(run, root / "ablation"));
  report(8, "PHM 2012 task 1", phm_task1(root / "phm-task1"));
  report(9, "repeated synthetic run gives byte-identical metrics", determinism(run, root / "synthetic-1-again"));

  std::printf("%d criterion(s) failed\n", failures);
  return failures == 0 ? 0 : 1;
}
