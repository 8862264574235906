#include "dhi/skipae.hpp"
#include "oracles/oracles.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cmath>

using namespace dhi;
using namespace dhi::skipae;

namespace {

SkipAEConfig small_config() {
  SkipAEConfig c;
  c.input_length = 70;
  c.latent_dim = 4;
  c.channels = {2, 3, 4};
  c.kernel_size = 4;
  c.stride = 2;
  return c;
}

const nn::Parameter<Real>& find_param(SkipAEModel& m, const std::string& name) {
  for (auto* p : m.parameters()) {
    if (p->name == name) return *p;
  }
  FAIL("no parameter " << name);
  throw 0;
}

std::vector<double> as_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

Tensor smooth_batch(Index n, Index len, double shift) {
  Tensor t(n, 1, len);
  for (Index b = 0; b < n; ++b)
    for (Index l = 0; l < len; ++l)
      t(b, 0, l) = std::sin(0.07 * static_cast<double>(l) + shift * static_cast<double>(b)) +
                   0.3 * std::cos(0.31 * static_cast<double>(l * (b + 1)));
  return t;
}

std::vector<ingestion::SpectrumSample> synthetic_spectra(Index windows, Index window_len) {
  ingestion::SynthConfig cfg;
  cfg.n_windows = windows;
  cfg.window_len = window_len;
  const auto rec = ingestion::synth_generate(cfg);
  return ingestion::standardize(ingestion::to_spectra(rec)).samples;
}

}  // namespace

TEST_SUITE("skipae shapes") {
  TEST_CASE("every layer output matches the reference architecture") {
    SkipAEModel model(SkipAEConfig{}, 1);
    std::vector<ShapeRecord> trace;
    const Tensor y = model.forward(Tensor(2, 1, 1280), true, &trace);
    const std::vector<std::pair<Index, Index>> want{{8, 636},  {16, 314}, {32, 153}, {4896, 1},
                                                    {32, 1},   {4896, 1}, {32, 153}, {16, 314},
                                                    {16, 314}, {8, 636},  {8, 636},  {1, 1280}};
    REQUIRE(trace.size() == want.size());
    for (std::size_t i = 0; i < want.size(); ++i) {
      INFO(trace[i].layer);
      CHECK(trace[i].channels == want[i].first);
      CHECK(trace[i].length == want[i].second);
    }
    CHECK(y.channels() == 1);
    CHECK(y.length() == 1280);
    CHECK(model.flat_size() == 4896);
  }

  TEST_CASE("features are 32-dimensional") {
    SkipAEModel model(SkipAEConfig{}, 1);
    const std::vector<ingestion::SpectrumSample> one{{1, Vector::LinSpaced(1280, -1, 1)}};
    const auto f = model.extract_features(one);
    REQUIRE(f.size() == 1);
    CHECK(f[0].z.size() == 32);
  }

  TEST_CASE("mismatched input length names the axis") {
    SkipAEModel model(small_config(), 1);
    CHECK_THROWS_WITH_AS(model.forward(Tensor(2, 1, 71), true), doctest::Contains("length axis"), DimensionError);
  }

  TEST_CASE("decoder lengths that do not mirror the encoder are rejected") {
    auto c = small_config();
    c.input_length = 64;
    CHECK_THROWS_AS(SkipAEModel(c, 1), ConfigError);
  }
}

TEST_SUITE("skipae encode") {
  TEST_CASE("identical inputs give identical features") {
    SkipAEModel model(small_config(), 3);
    const Vector x = Vector::LinSpaced(70, 0, 2).array().sin();
    const std::vector<ingestion::SpectrumSample> two{{1, x}, {2, x}};
    const auto f = model.extract_features(two);
    CHECK(f[0].z == f[1].z);
  }

  TEST_CASE("untrained features match a loop-based forward pass") {
    SkipAEModel model(small_config(), 5);
    const Tensor x = smooth_batch(2, 70, 0.4);
    SkipTaps taps;
    const Tensor z = model.encode(x, false, &taps);

    const double bn_scale = 1.0 / std::sqrt(1.0 + 1e-5);
    auto bn_leaky = [&](std::vector<double> v) {
      for (auto& e : v) {
        e *= bn_scale;
        e = e > 0 ? e : 0.01 * e;
      }
      return v;
    };
    std::vector<double> h = as_std(x.data());
    Index in = 1;
    Index len = 70;
    const std::array<Index, 3> ch{2, 3, 4};
    for (int i = 0; i < 3; ++i) {
      const std::string base = "encoder.conv" + std::to_string(i + 1);
      h = bn_leaky(oracle::conv1d(h, 2, in, len, as_std(find_param(model, base + ".weight").values),
                                  as_std(find_param(model, base + ".bias").values), ch[static_cast<std::size_t>(i)], 4, 2));
      len = (len - 4) / 2 + 1;
      in = ch[static_cast<std::size_t>(i)];
    }
    const auto& w = find_param(model, "encoder.latent.weight");
    const auto& b = find_param(model, "encoder.latent.bias");
    const Index flat = in * len;
    for (Index s = 0; s < 2; ++s)
      for (Index o = 0; o < 4; ++o) {
        double acc = b.values[o];
        for (Index f = 0; f < flat; ++f) acc += w.values[o * flat + f] * h[static_cast<std::size_t>(s * flat + f)];
        CHECK(z(s, o, 0) == doctest::Approx(acc * bn_scale).epsilon(1e-12));
      }
  }

  TEST_CASE("golden features of the default model under seed 1") {
    SkipAEModel model(SkipAEConfig{}, 1);
    Vector x(1280);
    for (Index l = 0; l < 1280; ++l) x[l] = std::sin(0.01 * static_cast<double>(l));
    const std::vector<ingestion::SpectrumSample> one{{1, x}};
    const Vector z = model.extract_features(one)[0].z;
    const std::array<double, 4> golden{0.83983296486888348, -0.047915929229389545, -0.28675983696630963, -0.66433228415469969};
    for (Index i = 0; i < 4; ++i) CHECK(z[i] == doctest::Approx(golden[static_cast<std::size_t>(i)]).epsilon(1e-10));
  }
}

TEST_SUITE("skipae decode") {
  TEST_CASE("zeroing the skip taps changes the reconstruction") {
    SkipAEModel model(small_config(), 7);
    const Tensor x = smooth_batch(3, 70, 0.2);
    SkipTaps taps;
    const Tensor z = model.encode(x, false, &taps);
    const Tensor with = model.decode(z, &taps, false);
    SkipTaps zero;
    for (std::size_t i = 0; i < 3; ++i) zero.maps[i] = Tensor(taps.maps[i].batch(), taps.maps[i].channels(), taps.maps[i].length());
    const Tensor without = model.decode(z, &zero, false);
    CHECK((with.data() - without.data()).norm() > 1e-6);
  }

  TEST_CASE("missing taps with skips enabled is a state error") {
    SkipAEModel model(small_config(), 7);
    CHECK_THROWS_AS(model.decode(Tensor(2, 4, 1), nullptr, false), StateError);
  }

  TEST_CASE("skips disabled ignores taps") {
    auto c = small_config();
    c.skip_enabled = false;
    SkipAEModel model(c, 7);
    CHECK(model.decode(Tensor(2, 4, 1), nullptr, false).length() == 70);
  }
}

TEST_SUITE("reconstruction loss") {
  TEST_CASE("perfect reconstruction") {
    const Tensor x = smooth_batch(2, 10, 1.0);
    CHECK(reconstruction_loss(x, x) == 0.0);
  }

  TEST_CASE("unit distance on one sample") {
    Tensor x(1, 1, 5);
    x(0, 0, 0) = 1.0;
    CHECK(reconstruction_loss(x, Tensor(1, 1, 5)) == 1.0);
  }

  TEST_CASE("matches the two-loop sum") {
    Rng rng(40);
    const Tensor a = testutil::randn_tensor(rng, 4, 1, 9);
    const Tensor b = testutil::randn_tensor(rng, 4, 1, 9);
    double acc = 0.0;
    for (Index s = 0; s < 4; ++s)
      for (Index l = 0; l < 9; ++l) acc += (a(s, 0, l) - b(s, 0, l)) * (a(s, 0, l) - b(s, 0, l));
    CHECK(reconstruction_loss(a, b) == doctest::Approx(acc / 4.0).epsilon(1e-14));
  }
}

TEST_SUITE("skipae gradients") {
  TEST_CASE("full model against central differences") {
    for (bool skip : {true, false}) {
      CAPTURE(skip);
      auto c = small_config();
      c.skip_enabled = skip;
      SkipAEModel model(c, 11);
      const Tensor x = smooth_batch(3, 70, 0.9);
      auto params = model.parameters();
      nn::zero_grads(params);
      const Tensor y = model.forward(x, true);
      model.backward(reconstruction_loss_grad(x, y));
      auto loss = [&] { return reconstruction_loss(x, model.forward(x, true)); };
      Vector analytic(0);
      Vector numeric(0);
      for (auto* p : params) {
        const Vector a = p->grad;
        const Vector n = oracle::numeric_gradient(p->values, loss, 1e-5);
        analytic.conservativeResize(analytic.size() + a.size());
        analytic.tail(a.size()) = a;
        numeric.conservativeResize(numeric.size() + n.size());
        numeric.tail(n.size()) = n;
      }
      CHECK(oracle::relative_error(analytic, numeric) < 1e-4);
    }
  }

  TEST_CASE("gradient reaches the first encoder layer") {
    SkipAEModel model(small_config(), 12);
    Rng rng(12);
    const Tensor x = testutil::randn_tensor(rng, 4, 1, 70);
    nn::zero_grads(model.parameters());
    const Tensor y = model.forward(x, true);
    model.backward(reconstruction_loss_grad(x, y));
    CHECK(model.parameters().front()->name == "encoder.conv1.weight");
    CHECK(model.parameters().front()->grad.norm() > 0.0);
  }

  TEST_CASE("backward without forward is a state error") {
    SkipAEModel model(small_config(), 1);
    CHECK_THROWS_AS(model.backward(Tensor(2, 1, 70)), StateError);
  }
}

TEST_SUITE("skipae training") {
  TEST_CASE("fifty epochs on 200 synthetic spectra cut the loss tenfold") {
    const auto spectra = synthetic_spectra(200, 140);
    const Tensor data = stack_spectra(spectra);
    auto c = small_config();
    c.channels = {8, 16, 16};
    c.latent_dim = 8;
    SkipAEModel model(c, 21);
    TrainOptions opt;
    opt.optimizer.max_epoch = 50;
    opt.optimizer.learning_rate = 3e-3;
    opt.optimizer.batch_size = 32;
    opt.seed = 21;
    const auto history = train_skipae(model, data, opt);
    REQUIRE(history.size() == 50);
    CHECK(history.back().loss < 0.1 * history.front().loss);

    const Tensor first = data.gather(std::vector<Index>{0});
    SkipTaps taps;
    const Tensor recon = model.decode(model.encode(first, false, &taps), &taps, false);
    CHECK(reconstruction_loss(first, recon) / 70.0 < history.back().loss);
  }

  TEST_CASE("zero learning rate leaves parameters and loss unchanged") {
    const Tensor data = stack_spectra(synthetic_spectra(50, 140));
    SkipAEModel model(small_config(), 22);
    std::vector<Vector> before;
    for (auto* p : model.parameters()) before.push_back(p->values);
    TrainOptions opt;
    opt.optimizer.max_epoch = 3;
    opt.optimizer.learning_rate = 0.0;
    opt.optimizer.batch_size = 50;
    const auto history = train_skipae(model, data, opt);
    std::size_t i = 0;
    for (auto* p : model.parameters()) CHECK(p->values == before[i++]);
    for (const auto& r : history) CHECK(r.loss == doctest::Approx(history.front().loss).epsilon(1e-12));
  }

  TEST_CASE("identical seeds give identical loss curves") {
    const Tensor data = stack_spectra(synthetic_spectra(60, 140));
    auto run = [&] {
      SkipAEModel model(small_config(), 23);
      TrainOptions opt;
      opt.optimizer.max_epoch = 4;
      opt.optimizer.batch_size = 16;
      opt.seed = 5;
      std::vector<double> curve;
      for (const auto& r : train_skipae(model, data, opt)) curve.push_back(r.loss);
      return curve;
    };
    CHECK(run() == run());
  }

  TEST_CASE("ten-sample overfit is non-increasing after epoch 20") {
    const auto all = synthetic_spectra(60, 140);
    const std::vector<ingestion::SpectrumSample> ten(all.begin(), all.begin() + 10);
    SkipAEModel model(small_config(), 24);
    TrainOptions opt;
    opt.optimizer.max_epoch = 80;
    opt.optimizer.batch_size = 10;
    opt.optimizer.learning_rate = 5e-3;
    const auto history = train_skipae(model, stack_spectra(ten), opt);
    for (std::size_t e = 21; e < history.size(); ++e) {
      CAPTURE(e);
      CHECK(history[e].loss <= 1.05 * history[e - 1].loss);
    }
  }

  TEST_CASE("resuming replays the same batches") {
    const Tensor data = stack_spectra(synthetic_spectra(60, 140));
    const auto dir = testutil::scratch_dir("skipae-resume");
    TrainOptions opt;
    opt.optimizer.max_epoch = 6;
    opt.optimizer.batch_size = 16;
    opt.seed = 9;
    SkipAEModel full(small_config(), 25);
    const auto reference = train_skipae(full, data, opt);

    SkipAEModel first(small_config(), 25);
    opt.on_epoch = [&](const EpochRecord& r, SkipAEModel& m) {
      if (r.epoch == 2) save_skipae(m, dir);
    };
    train_skipae(first, data, opt);
    auto resumed = load_skipae(dir);
    opt.on_epoch = nullptr;
    opt.start_epoch = 3;
    const auto tail = train_skipae(resumed, data, opt);
    REQUIRE(tail.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) CHECK(tail[i].loss == reference[i + 3].loss);
  }

  TEST_CASE("checkpoint round trip preserves features") {
    const auto spectra = synthetic_spectra(50, 140);
    SkipAEModel model(small_config(), 26);
    TrainOptions opt;
    opt.optimizer.max_epoch = 2;
    train_skipae(model, stack_spectra(spectra), opt);
    const auto dir = testutil::scratch_dir("skipae-ckpt");
    save_skipae(model, dir, {{"note", "x"}});
    nlohmann::json state;
    auto back = load_skipae(dir, &state);
    CHECK(state.at("note") == "x");
    const auto a = model.extract_features(spectra);
    const auto b = back.extract_features(spectra);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].z == b[i].z);
  }
}
