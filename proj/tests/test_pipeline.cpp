#include "dhi/pipeline.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <sstream>

using namespace dhi;
using namespace dhi::pipeline;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json synth_source(const std::string& id) {
  return {{"id", id},
          {"format", "synthetic"},
          {"synth",
           {{"n_windows", 60},
            {"window_len", 140},
            {"noise_std", 0.01},
            {"fault_onset_fraction", 0.05},
            {"growth", "linear"},
            {"growth_rate", 0.05},
            {"random_phase", false}}}};
}

json tiny_config(const fs::path& out) {
  return {{"seed", 3},
          {"out", out.string()},
          {"data", {{"train", {synth_source("tr-a"), synth_source("tr-b")}}, {"test", {synth_source("te-c")}}}},
          {"skipae",
           {{"input_length", 70},
            {"latent_dim", 4},
            {"channels", {2, 3, 4}},
            {"kernel_size", 4},
            {"stride", 2},
            {"max_epoch", 4},
            {"batch_size", 16}}},
          {"hi",
           {{"feature_dim", 4},
            {"hidden", {3}},
            {"pool_window", 3},
            {"lookback", 4},
            {"pretrain_epochs", 2},
            {"max_epoch", 4},
            {"batch_size", 16}}},
          {"evaluation", {{"smoothing_window", 5}}},
          {"forecast", {{"test_len", 10}, {"lookback", 4}, {"pool_window", 3}, {"max_epoch", 20}}}};
}

fs::path write_config(const fs::path& dir, const json& j) {
  const auto path = dir / "config.json";
  testutil::write_file(path, j.dump(2));
  return path;
}

struct CliResult {
  int code = -1;
  std::string output;
};

CliResult run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(DHI_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.output = testutil::read_file(log);
  return r;
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  for (std::string cell; std::getline(in, cell, ',');) out.push_back(cell);
  return out;
}

}  // namespace

TEST_SUITE("config") {
  TEST_CASE("schema errors carry the offending pointer") {
    auto j = tiny_config("unused");
    j["hi"]["lambda"] = -1.0;
    j["skipae"]["bogus"] = 1;
    try {
      config_from_json(j);
      FAIL("expected a config error");
    } catch (const ConfigError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("/hi/lambda") != std::string::npos);
      CHECK(msg.find("/skipae/bogus") != std::string::npos);
    }
  }

  TEST_CASE("missing data section is reported") {
    const auto v = schema_violations(config_schema(), json{{"seed", 1}});
    REQUIRE(v.size() == 1);
    CHECK(v[0].rfind("/data", 0) == 0);
  }

  TEST_CASE("mismatched feature width is a config error") {
    auto j = tiny_config("unused");
    j["hi"]["feature_dim"] = 5;
    CHECK_THROWS_AS(config_from_json(j), ConfigError);
  }

  TEST_CASE("resolved config survives a JSON round trip") {
    const auto c = config_from_json(tiny_config("unused"));
    CHECK(config_from_json(c.to_json()).to_json() == c.to_json());
  }

  TEST_CASE("malformed thread count is a config error") {
    setenv("DHI_NUM_THREADS", "two", 1);
    CHECK_THROWS_AS(thread_count(), ConfigError);
    setenv("DHI_NUM_THREADS", "2", 1);
    CHECK(thread_count() == 2);
    unsetenv("DHI_NUM_THREADS");
    CHECK(thread_count() == 1);
  }

  TEST_CASE("git blob hash of a known string") {
    CHECK(git_blob_sha1("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
    CHECK(git_blob_sha1("hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a");
  }
}

TEST_SUITE("pipeline") {
  TEST_CASE("prepare reuses an unchanged cache") {
    const auto dir = testutil::scratch_dir("pipe-cache");
    const auto c = config_from_json(tiny_config(dir / "run"));
    const auto first = cmd_prepare(c);
    const auto second = cmd_prepare(c);
    CHECK_FALSE(first.cache_hit);
    CHECK(second.cache_hit);
    CHECK(first.fingerprint == second.fingerprint);
    auto j = tiny_config(dir / "run");
    j["data"]["test"][0]["synth"]["noise_std"] = 0.02;
    CHECK_FALSE(cmd_prepare(config_from_json(j)).cache_hit);
  }

  TEST_CASE("rms baseline equals the root mean square of each raw window") {
    const auto dir = testutil::scratch_dir("pipe-rms");
    auto j = tiny_config(dir / "run");
    j["evaluation"]["methods"] = {"rms-baseline"};
    const auto c = config_from_json(j);
    cmd_prepare(c);
    cmd_construct(c);
    const auto& src = c.test[0];
    const auto record = ingestion::synth_generate(src.synth, src.id);
    const auto s = hi::read_hi_csv(RunPaths{c.out}.hi_dir("rms-baseline") / "te-c.csv");
    REQUIRE(s.raw.size() == static_cast<Index>(record.windows.size()));
    for (std::size_t i = 0; i < record.windows.size(); ++i) {
      const auto& x = record.windows[i].samples;
      CHECK(s.raw[static_cast<Index>(i)] == doctest::Approx(std::sqrt(x.squaredNorm() / x.size())).epsilon(1e-12));
    }
  }

  TEST_CASE("pca ablation needs no dynamic HI checkpoint") {
    const auto dir = testutil::scratch_dir("pipe-pca");
    auto j = tiny_config(dir / "run");
    j["evaluation"]["methods"] = {"pca-ablation"};
    j["ablation"] = {{"use_pca_hi", true}};
    const auto c = config_from_json(j);
    cmd_prepare(c);
    const auto summary = cmd_train(c);
    CHECK_FALSE(summary.hi.has_value());
    CHECK_FALSE(fs::exists(RunPaths{c.out}.hi_checkpoint()));
    CHECK_NOTHROW(cmd_construct(c));
    CHECK(fs::exists(RunPaths{c.out}.hi_dir("pca-ablation") / "te-c.csv"));
  }

  TEST_CASE("max epoch one logs exactly one epoch per stage") {
    const auto dir = testutil::scratch_dir("pipe-epoch");
    const auto c = config_from_json(tiny_config(dir / "run"));
    cmd_prepare(c);
    TrainFlags flags;
    flags.max_epoch = 1;
    const auto s = cmd_train(c, flags);
    CHECK(s.skipae_history.size() == 1);
    REQUIRE(s.hi.has_value());
    CHECK(s.hi->history.size() == 1);
    CHECK(lines(testutil::read_file(RunPaths{c.out}.curves() / "skipae_loss.csv")).size() == 2);
  }

  TEST_CASE("resuming reproduces the loss curve tail") {
    const auto dir = testutil::scratch_dir("pipe-resume");
    const auto full = config_from_json(tiny_config(dir / "full"));
    cmd_prepare(full);
    cmd_train(full);
    const auto part = config_from_json(tiny_config(dir / "part"));
    cmd_prepare(part);
    TrainFlags cap;
    cap.max_epoch = 2;
    cmd_train(part, cap);
    TrainFlags resume;
    resume.resume = true;
    const auto s = cmd_train(part, resume);
    CHECK(s.skipae_resumed_from == 2);
    const auto curve = [](const ExperimentConfig& c) {
      return testutil::read_file(RunPaths{c.out}.curves() / "skipae_loss.csv");
    };
    CHECK(curve(part) == curve(full));
    CHECK(testutil::read_file(RunPaths{part.out}.curves() / "hi_loss.csv") ==
          testutil::read_file(RunPaths{full.out}.curves() / "hi_loss.csv"));
  }

  TEST_CASE("full run is deterministic and self-consistent") {
    testutil::WarningCapture quiet;
    const auto dir = testutil::scratch_dir("pipe-full");
    const auto a = config_from_json(tiny_config(dir / "a"));
    const auto b = config_from_json(tiny_config(dir / "b"));
    const auto summary_a = [&] {
      cmd_prepare(a);
      return cmd_train(a);
    }();
    cmd_construct(a);
    const auto rows = cmd_evaluate(a);
    const auto forecasts = cmd_forecast(a);
    const auto manifest = cmd_report(a);
    run_all(b);

    const RunPaths pa{a.out};
    const RunPaths pb{b.out};
    CHECK(testutil::read_file(pa.metrics_csv()) == testutil::read_file(pb.metrics_csv()));
    CHECK(testutil::read_file(pa.forecast_csv()) == testutil::read_file(pb.forecast_csv()));
    for (const auto& e : fs::directory_iterator(pa.plots())) {
      INFO(e.path().filename().string());
      CHECK(testutil::read_file(e.path()) == testutil::read_file(pb.plots() / e.path().filename()));
    }

    SUBCASE("every metric row has HS equal to the mean of its siblings") {
      const auto csv = lines(testutil::read_file(pa.metrics_csv()));
      REQUIRE(csv.size() == 1 + 3 * 3);
      for (std::size_t i = 1; i < csv.size(); ++i) {
        const auto cells = split_csv(csv[i]);
        const double mon = std::stod(cells[3]);
        const double tred = std::stod(cells[4]);
        const double rob = std::stod(cells[5]);
        CHECK(std::stod(cells[6]) == doctest::Approx((mon + tred + rob) / 3.0).epsilon(1e-15));
        CHECK(cells[8] == "3");
      }
      CHECK(rows.size() == 9);
    }

    SUBCASE("accuracy matches the RUL invariant on every forecast row") {
      for (const auto& r : forecasts) {
        const auto& p = r.prognosis;
        if (p.rul_estimated && p.rul_actual) {
          CHECK(*p.accuracy == doctest::Approx(prognosis::rul_accuracy(*p.rul_actual, *p.rul_estimated)));
        } else {
          CHECK_FALSE(p.accuracy.has_value());
        }
      }
    }

    SUBCASE("ours on a training bearing is the final training HI") {
      REQUIRE(summary_a.hi.has_value());
      const auto& trained = summary_a.hi->series;
      REQUIRE(!trained.empty());
      const auto s = hi::read_hi_csv(pa.hi_dir("ours") / (trained.front().bearing_id + ".csv"));
      CHECK((s.values - trained.front().values).cwiseAbs().maxCoeff() < 1e-15);
    }

    SUBCASE("forecast plot marks the split point and the threshold") {
      const auto svg = testutil::read_file(pa.plots() / "forecast_ours_te-c.svg");
      CHECK(svg.find("<svg") != std::string::npos);
      CHECK(svg.find("class=\"marker-vertical\"") != std::string::npos);
      CHECK(svg.find("class=\"marker-horizontal\"") != std::string::npos);
    }

    SUBCASE("the manifest alone reproduces the reports") {
      CHECK(manifest["seed"] == 3);
      CHECK(manifest["hashes"]["outputs"].contains("metrics.csv"));
      json replay = manifest;
      replay["config"]["out"] = (dir / "replay").string();
      const auto c = config_from_json(replay);
      run_all(c);
      const RunPaths pr{c.out};
      CHECK(testutil::read_file(pr.metrics_csv()) == testutil::read_file(pa.metrics_csv()));
      CHECK(testutil::read_file(pr.forecast_csv()) == testutil::read_file(pa.forecast_csv()));
      CHECK(cmd_report(c)["hashes"] == manifest["hashes"]);
    }
  }

  TEST_CASE("ablation flags change the checkpoint hashes") {
    const auto dir = testutil::scratch_dir("pipe-ablate");
    auto j = tiny_config(dir / "full");
    const auto on = config_from_json(j);
    j["out"] = (dir / "noskip").string();
    j["ablation"] = {{"skip_enabled", false}, {"prediction_block_enabled", false}};
    const auto off = config_from_json(j);
    for (const auto* c : {&on, &off}) {
      cmd_prepare(*c);
      cmd_train(*c);
    }
    const auto m_on = cmd_report(on);
    const auto m_off = cmd_report(off);
    CHECK(m_on["hashes"]["checkpoints"] != m_off["hashes"]["checkpoints"]);
    CHECK(m_on["config"]["ablation"] != m_off["config"]["ablation"]);
  }

  TEST_CASE("construct without a checkpoint names the missing path") {
    const auto dir = testutil::scratch_dir("pipe-nockpt");
    const auto c = config_from_json(tiny_config(dir / "run"));
    cmd_prepare(c);
    try {
      cmd_construct(c);
      FAIL("expected a missing-checkpoint error");
    } catch (const NotFoundError& e) {
      CHECK(std::string(e.what()).find("checkpoints") != std::string::npos);
    }
  }
}

TEST_SUITE("cli") {
  TEST_CASE("exit code 0 on success") {
    const auto dir = testutil::scratch_dir("cli-ok");
    const auto cfg = write_config(dir, tiny_config(dir / "run"));
    const auto r = run_cli("--config " + cfg.string() + " prepare", dir / "log.txt");
    CHECK(r.code == 0);
    CHECK(r.output.find("cache written") != std::string::npos);
    CHECK(run_cli("--config " + cfg.string() + " prepare", dir / "log.txt").output.find("cache hit") !=
          std::string::npos);
  }

  TEST_CASE("exit code 1 on a config error") {
    const auto dir = testutil::scratch_dir("cli-config");
    auto j = tiny_config(dir / "run");
    j["forecast"]["threshold"] = 1.5;
    const auto cfg = write_config(dir, j);
    const auto r = run_cli("--config " + cfg.string() + " prepare", dir / "log.txt");
    CHECK(r.code == 1);
    CHECK(r.output.find("/forecast/threshold") != std::string::npos);
    CHECK(run_cli("--config " + (dir / "absent.json").string() + " prepare", dir / "log.txt").code == 1);
    CHECK(run_cli("--config " + cfg.string() + " frobnicate", dir / "log.txt").code == 1);
  }

  TEST_CASE("exit code 2 on a corrupt CSV, naming the file") {
    const auto dir = testutil::scratch_dir("cli-corrupt");
    ingestion::SynthConfig synth;
    synth.n_windows = 50;
    synth.window_len = 140;
    ingestion::export_generic(ingestion::synth_generate(synth, "g"), dir / "generic");
    fs::path victim;
    for (const auto& e : fs::directory_iterator(dir / "generic")) {
      if (e.path().extension() == ".csv") victim = e.path();
    }
    REQUIRE(!victim.empty());
    testutil::write_file(victim, "0.1\nnot-a-number\n0.3\n");
    auto j = tiny_config(dir / "run");
    j["data"]["test"][0] = {{"id", "g"}, {"format", "generic"}, {"path", (dir / "generic").string()}};
    const auto cfg = write_config(dir, j);
    const auto r = run_cli("--config " + cfg.string() + " prepare", dir / "log.txt");
    CHECK(r.code == 2);
    CHECK(r.output.find(victim.filename().string()) != std::string::npos);
  }

  TEST_CASE("exit code 2 on a missing input path") {
    const auto dir = testutil::scratch_dir("cli-missing");
    auto j = tiny_config(dir / "run");
    j["data"]["test"][0] = {{"id", "p"}, {"format", "pronostia"}, {"path", (dir / "nowhere").string()}};
    const auto r = run_cli("--config " + write_config(dir, j).string() + " prepare", dir / "log.txt");
    CHECK(r.code == 2);
    CHECK(r.output.find("nowhere") != std::string::npos);
  }

  TEST_CASE("exit code 3 on a diverging run") {
    const auto dir = testutil::scratch_dir("cli-diverge");
    auto j = tiny_config(dir / "run");
    j["skipae"]["learning_rate"] = 1e300;
    const auto cfg = write_config(dir, j);
    REQUIRE(run_cli("--config " + cfg.string() + " prepare", dir / "log.txt").code == 0);
    const auto r = run_cli("--config " + cfg.string() + " train", dir / "log.txt");
    CHECK(r.code == 3);
    CHECK(r.output.find("non-finite") != std::string::npos);
  }

  TEST_CASE("train with max epoch one reports one epoch") {
    const auto dir = testutil::scratch_dir("cli-epoch");
    const auto cfg = write_config(dir, tiny_config(dir / "run"));
    REQUIRE(run_cli("--config " + cfg.string() + " prepare", dir / "log.txt").code == 0);
    const auto r = run_cli("--config " + cfg.string() + " train --max-epoch 1", dir / "log.txt");
    CHECK(r.code == 0);
    CHECK(r.output.find("skipae: 1 epoch(s)") != std::string::npos);
  }
}
