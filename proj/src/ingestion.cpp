#include "dhi/ingestion.hpp"

#include "dhi/random.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <complex>
#include <fstream>
#include <map>
#include <numbers>
#include <regex>
#include <sstream>

namespace dhi::ingestion {

namespace fs = std::filesystem;
using nlohmann::json;

void RunRecord::validate() const {
  if (windows.empty()) throw DataError("record '" + bearing_id + "' has no windows");
  const Index len = windows.front().samples.size();
  for (std::size_t i = 0; i < windows.size(); ++i) {
    if (windows[i].samples.size() != len) {
      throw DataError("record '" + bearing_id + "': window " + std::to_string(windows[i].index) +
                      " has length " + std::to_string(windows[i].samples.size()) +
                      ", expected " + std::to_string(len));
    }
    if (i > 0 && windows[i].index <= windows[i - 1].index) {
      throw DataError("record '" + bearing_id + "': window indices are not strictly increasing");
    }
  }
  if (end_of_life_index > windows.back().index) {
    throw DataError("record '" + bearing_id + "': end_of_life_index beyond last window");
  }
}

// ---------------------------------------------------------------------------
// PRONOSTIA

namespace {

bool parse_double(std::string_view text, double& value) {
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r')) {
    text.remove_suffix(1);
  }
  if (text.empty()) return false;
  const char* begin = text.data();
  const char* end = begin + text.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  return ec == std::errc() && ptr == end;
}

std::vector<std::string_view> split_fields(std::string_view line, char delimiter) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(delimiter, start);
    if (pos == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return fields;
}

Vector read_pronostia_file(const fs::path& file, Index window_length) {
  std::ifstream in(file);
  if (!in) throw NotFoundError("cannot open " + file.string());
  Vector samples(window_length);
  std::string line;
  Index row = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    ++row;
    if (row > window_length) {
      throw ParseError(file.string() + ": more than " + std::to_string(window_length) + " rows");
    }
    const char delimiter = line.find(';') != std::string::npos ? ';' : ',';
    const auto fields = split_fields(line, delimiter);
    if (fields.size() < 6) {
      throw ParseError(file.string() + ": row " + std::to_string(row) + " has " +
                       std::to_string(fields.size()) + " fields, expected 6");
    }
    double value = 0.0;
    if (!parse_double(fields[4], value)) {
      throw ParseError(file.string() + ": row " + std::to_string(row) +
                       ": horizontal acceleration is not numeric");
    }
    samples[row - 1] = value;
  }
  if (row != window_length) {
    throw ParseError(file.string() + ": expected " + std::to_string(window_length) +
                     " rows, found " + std::to_string(row));
  }
  return samples;
}

}  // namespace

RunRecord load_pronostia(const fs::path& dir, Index window_length, double sample_rate_hz) {
  if (!fs::is_directory(dir)) throw NotFoundError("bearing directory not found: " + dir.string());
  static const std::regex kPattern(R"(acc_(\d+)\.csv)");
  std::map<Index, fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    std::smatch match;
    if (std::regex_match(name, match, kPattern)) {
      files.emplace(std::stoll(match[1].str()), entry.path());
    }
  }
  if (files.empty()) throw NotFoundError("no acc_*.csv files in " + dir.string());

  RunRecord record;
  record.bearing_id = dir.filename().string();
  if (record.bearing_id.empty()) record.bearing_id = dir.parent_path().filename().string();
  record.windows.reserve(files.size());
  for (const auto& [index, path] : files) {
    record.windows.push_back({index, read_pronostia_file(path, window_length), sample_rate_hz});
  }
  record.end_of_life_index = record.windows.back().index;
  record.validate();
  return record;
}

// ---------------------------------------------------------------------------
// Generic format

RunRecord load_generic(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw NotFoundError("missing manifest: " + manifest_path.string());
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(manifest_path.string() + ": " + e.what());
  }
  RunRecord record;
  try {
    record.bearing_id = manifest.at("bearing_id").get<std::string>();
    const double rate = manifest.at("sample_rate_hz").get<double>();
    for (const auto& w : manifest.at("windows")) {
      const fs::path file = dir / w.at("file").get<std::string>();
      std::ifstream win(file);
      if (!win) throw NotFoundError("missing window file: " + file.string());
      std::vector<double> values;
      std::string line;
      Index row = 0;
      while (std::getline(win, line)) {
        ++row;
        if (line.empty() || line == "\r") continue;
        double v = 0.0;
        if (!parse_double(line, v)) {
          throw ParseError(file.string() + ": row " + std::to_string(row) + " is not numeric");
        }
        values.push_back(v);
      }
      record.windows.push_back(
          {w.at("index").get<Index>(),
           Eigen::Map<const Vector>(values.data(), static_cast<Index>(values.size())), rate});
    }
    std::sort(record.windows.begin(), record.windows.end(),
              [](const SignalWindow& a, const SignalWindow& b) { return a.index < b.index; });
    record.end_of_life_index = manifest.contains("end_of_life_index")
                                   ? manifest.at("end_of_life_index").get<Index>()
                                   : (record.windows.empty() ? 0 : record.windows.back().index);
  } catch (const json::exception& e) {
    throw ParseError(manifest_path.string() + ": " + e.what());
  }
  record.validate();
  return record;
}

void export_generic(const RunRecord& record, const fs::path& dir) {
  record.validate();
  fs::create_directories(dir);
  json windows = json::array();
  for (const auto& w : record.windows) {
    char name[32];
    std::snprintf(name, sizeof name, "window_%05lld.csv", static_cast<long long>(w.index));
    std::ofstream out(dir / name, std::ios::trunc);
    out.precision(17);
    for (Index i = 0; i < w.samples.size(); ++i) out << w.samples[i] << '\n';
    if (!out) throw DataError("cannot write " + (dir / name).string());
    windows.push_back({{"index", w.index}, {"file", name}});
  }
  json manifest{{"bearing_id", record.bearing_id},
                {"sample_rate_hz", record.windows.front().sample_rate_hz},
                {"end_of_life_index", record.end_of_life_index},
                {"windows", windows}};
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  out << manifest.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Spectra

Vector magnitude_spectrum(const Vector& samples) {
  const Index m = samples.size();
  if (m == 0 || m % 2 != 0) {
    throw ConfigError("to_spectrum: window length must be even and positive, got " +
                      std::to_string(m));
  }
  Eigen::FFT<double> fft;
  std::vector<double> input(samples.data(), samples.data() + m);
  std::vector<std::complex<double>> output;
  fft.fwd(output, input);
  const Index half = m / 2;
  Vector bins(half);
  for (Index k = 0; k < half; ++k) {
    const double scale = k == 0 ? 1.0 / static_cast<double>(m) : 2.0 / static_cast<double>(m);
    bins[k] = std::abs(output[static_cast<std::size_t>(k)]) * scale;
  }
  return bins;
}

SpectrumSample to_spectrum(const SignalWindow& window) {
  return {window.index, magnitude_spectrum(window.samples)};
}

std::vector<SpectrumSample> to_spectra(const RunRecord& record) {
  std::vector<SpectrumSample> out;
  out.reserve(record.windows.size());
  for (const auto& w : record.windows) out.push_back(to_spectrum(w));
  return out;
}

double window_rms(const SignalWindow& window) {
  if (window.samples.size() == 0) throw DataError("window_rms: empty window");
  return std::sqrt(window.samples.squaredNorm() / static_cast<double>(window.samples.size()));
}

Vector rms_series(const RunRecord& record) {
  Vector out(static_cast<Index>(record.windows.size()));
  for (std::size_t i = 0; i < record.windows.size(); ++i) {
    out[static_cast<Index>(i)] = window_rms(record.windows[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Standardization

Vector StandardizationStats::apply(const Vector& bins) const {
  if (bins.size() != mean.size()) {
    throw DimensionError("standardize: spectrum has " + std::to_string(bins.size()) +
                         " bins, statistics have " + std::to_string(mean.size()));
  }
  return ((bins - mean).array() / stddev.array()).matrix();
}

std::vector<SpectrumSample> StandardizationStats::apply(
    std::span<const SpectrumSample> samples) const {
  std::vector<SpectrumSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back({s.index, apply(s.bins)});
  return out;
}

json StandardizationStats::to_json() const {
  return json{{"mean", std::vector<double>(mean.data(), mean.data() + mean.size())},
              {"stddev", std::vector<double>(stddev.data(), stddev.data() + stddev.size())},
              {"clamped_bins", clamped_bins}};
}

StandardizationStats StandardizationStats::from_json(const json& j) {
  const auto m = j.at("mean").get<std::vector<double>>();
  const auto s = j.at("stddev").get<std::vector<double>>();
  if (m.size() != s.size()) throw ParseError("standardization stats: mean/stddev size mismatch");
  StandardizationStats stats;
  stats.mean = Eigen::Map<const Vector>(m.data(), static_cast<Index>(m.size()));
  stats.stddev = Eigen::Map<const Vector>(s.data(), static_cast<Index>(s.size()));
  stats.clamped_bins = j.value("clamped_bins", Index{0});
  return stats;
}

StandardizationStats fit_standardization(std::span<const SpectrumSample> training) {
  if (training.empty()) throw DataError("standardize: empty training set");
  const Index bins = training.front().bins.size();
  StandardizationStats stats;
  stats.mean = Vector::Zero(bins);
  for (const auto& s : training) {
    if (s.bins.size() != bins) throw DimensionError("standardize: inconsistent spectrum lengths");
    stats.mean += s.bins;
  }
  stats.mean /= static_cast<double>(training.size());
  Vector var = Vector::Zero(bins);
  for (const auto& s : training) var += (s.bins - stats.mean).cwiseAbs2();
  var /= static_cast<double>(training.size());
  stats.stddev = var.cwiseSqrt();
  for (Index b = 0; b < bins; ++b) {
    if (!(stats.stddev[b] > StandardizationStats::kMinStd)) {
      stats.stddev[b] = StandardizationStats::kMinStd;
      ++stats.clamped_bins;
    }
  }
  if (stats.clamped_bins > 0) {
    warn("standardize: " + std::to_string(stats.clamped_bins) +
         " zero-variance bin(s) clamped to std = 1e-12");
  }
  return stats;
}

StandardizedSet standardize(std::span<const SpectrumSample> training) {
  StandardizedSet set;
  set.stats = fit_standardization(training);
  set.samples = set.stats.apply(training);
  return set;
}

// ---------------------------------------------------------------------------
// Synthetic generator

void SynthConfig::validate() const {
  if (n_windows < 50) throw ConfigError("synth: n_windows must be >= 50");
  if (window_len < 2 || window_len % 2 != 0) {
    throw ConfigError("synth: window_len must be even and >= 2");
  }
  if (!(fault_onset_fraction >= 0.0 && fault_onset_fraction < 1.0)) {
    throw ConfigError("synth: fault_onset_fraction must lie in [0, 1)");
  }
  if (!(broadband_coupling >= 0.0)) throw ConfigError("synth: broadband_coupling must be non-negative");
  if (!(sample_rate_hz > 0.0)) throw ConfigError("synth: sample_rate_hz must be positive");
  if (!(noise_std >= 0.0)) throw ConfigError("synth: noise_std must be non-negative");
  if (!(impulse_frequency_hz > 0.0)) throw ConfigError("synth: impulse_frequency_hz must be positive");
  if (!(damping_per_s >= 0.0)) throw ConfigError("synth: damping_per_s must be non-negative");
}

json SynthConfig::to_json() const {
  return json{{"n_windows", n_windows},
              {"window_len", window_len},
              {"sample_rate_hz", sample_rate_hz},
              {"noise_std", noise_std},
              {"fault_onset_fraction", fault_onset_fraction},
              {"growth_rate", growth_rate},
              {"growth", growth == SynthGrowth::Linear ? "linear" : "exponential"},
              {"broadband_coupling", broadband_coupling},
              {"random_phase", random_phase},
              {"impulse_frequency_hz", impulse_frequency_hz},
              {"impulse_amplitude", impulse_amplitude},
              {"resonance_hz", resonance_hz},
              {"damping_per_s", damping_per_s},
              {"seed", seed}};
}

SynthConfig SynthConfig::from_json(const json& j) {
  SynthConfig c;
  c.n_windows = j.value("n_windows", c.n_windows);
  c.window_len = j.value("window_len", c.window_len);
  c.sample_rate_hz = j.value("sample_rate_hz", c.sample_rate_hz);
  c.noise_std = j.value("noise_std", c.noise_std);
  c.fault_onset_fraction = j.value("fault_onset_fraction", c.fault_onset_fraction);
  c.growth_rate = j.value("growth_rate", c.growth_rate);
  c.broadband_coupling = j.value("broadband_coupling", c.broadband_coupling);
  c.random_phase = j.value("random_phase", c.random_phase);
  if (j.contains("growth")) {
    const auto g = j.at("growth").get<std::string>();
    if (g == "linear") c.growth = SynthGrowth::Linear;
    else if (g == "exponential") c.growth = SynthGrowth::Exponential;
    else throw ConfigError("synth: growth must be \"linear\" or \"exponential\", got \"" + g + "\"");
  }
  c.impulse_frequency_hz = j.value("impulse_frequency_hz", c.impulse_frequency_hz);
  c.impulse_amplitude = j.value("impulse_amplitude", c.impulse_amplitude);
  c.resonance_hz = j.value("resonance_hz", c.resonance_hz);
  c.damping_per_s = j.value("damping_per_s", c.damping_per_s);
  c.seed = j.value("seed", c.seed);
  return c;
}

RunRecord synth_generate(const SynthConfig& config, const std::string& bearing_id) {
  config.validate();
  Rng rng(derive_seed(config.seed, 0x5EED));
  const Index n = config.n_windows;
  const Index m = config.window_len;
  const Index onset = static_cast<Index>(std::floor(config.fault_onset_fraction * static_cast<double>(n)));
  const double dt = 1.0 / config.sample_rate_hz;
  const double period = config.sample_rate_hz / config.impulse_frequency_hz;

  // Burst template, truncated once it decays below 1e-4 of its peak.
  Index burst_len = m;
  if (config.damping_per_s > 0.0) {
    burst_len = std::min<Index>(m, static_cast<Index>(std::ceil(std::log(1e4) / config.damping_per_s /
                                                                 dt)) + 1);
  }
  Vector burst(burst_len);
  for (Index i = 0; i < burst_len; ++i) {
    const double t = static_cast<double>(i) * dt;
    burst[i] = std::exp(-config.damping_per_s * t) *
               std::sin(2.0 * std::numbers::pi * config.resonance_hz * t);
  }

  RunRecord record;
  record.bearing_id = bearing_id;
  record.windows.reserve(static_cast<std::size_t>(n));
  for (Index k = 0; k < n; ++k) {
    const double age = static_cast<double>(std::max<Index>(0, k - onset));
    const double envelope = config.growth == SynthGrowth::Linear
                                ? 1.0 + config.growth_rate * age
                                : std::exp(config.growth_rate * age);
    const double noise = config.noise_std * (1.0 + config.broadband_coupling * (envelope - 1.0));
    Vector samples(m);
    for (Index i = 0; i < m; ++i) samples[i] = noise * rng.normal();
    if (k >= onset) {
      const double amplitude = config.impulse_amplitude * envelope;
      // Bursts that started before the window contribute their tails, so the
      // train is stationary within the window.
      const double phase = config.random_phase ? rng.uniform01() * period : 0.0;
      const double first = phase - std::ceil(static_cast<double>(burst_len) / period) * period;
      for (double start = first; start < static_cast<double>(m); start += period) {
        const auto s0 = static_cast<Index>(std::floor(start));
        const Index skip = s0 < 0 ? -s0 : 0;
        const Index len = std::min<Index>(burst_len - skip, m - (s0 + skip));
        if (len <= 0) continue;
        samples.segment(s0 + skip, len) += amplitude * burst.segment(skip, len);
      }
    }
    record.windows.push_back({k + 1, std::move(samples), config.sample_rate_hz});
  }
  record.end_of_life_index = n;
  return record;
}

}  // namespace dhi::ingestion
