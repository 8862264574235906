#pragma once

#include "dhi/core.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace dhi::ingestion {

inline constexpr Index kPronostiaWindowLength = 2560;
inline constexpr double kPronostiaSampleRateHz = 25600.0;

/// One raw vibration window; `index` is its order within the run (1-based).
struct SignalWindow {
  Index index = 0;
  Vector samples;
  double sample_rate_hz = kPronostiaSampleRateHz;
};

/// One-sided magnitude spectrum of a window (window length / 2 bins).
struct SpectrumSample {
  Index index = 0;
  Vector bins;
};

/// Ordered run-to-failure record for one bearing.
struct RunRecord {
  std::string bearing_id;
  std::vector<SignalWindow> windows;
  Index end_of_life_index = 0;

  /// Non-empty, strictly increasing indices, uniform window length.
  void validate() const;
};

/// Reads a PRONOSTIA bearing directory of `acc_XXXXX.csv` files.
///
/// Each row is `hour,minute,second,microsecond,horizontal,vertical` (comma or
/// semicolon separated); only the horizontal channel is kept. Files are ordered
/// by their numeric suffix, not by directory listing order, and every file
/// must hold exactly `window_length` rows.
RunRecord load_pronostia(const std::filesystem::path& dir,
                         Index window_length = kPronostiaWindowLength,
                         double sample_rate_hz = kPronostiaSampleRateHz);

/// Generic format: `<dir>/manifest.json` with bearing_id, sample_rate_hz,
/// optional end_of_life_index and a `windows` list of {index, file}; each
/// window file is a one-column numeric CSV.
RunRecord load_generic(const std::filesystem::path& dir);
void export_generic(const RunRecord& record, const std::filesystem::path& dir);

/// |DFT| scaled by 2/m (bin 0 by 1/m), bins 0 .. m/2-1. Throws ConfigError
/// for odd lengths.
Vector magnitude_spectrum(const Vector& samples);
SpectrumSample to_spectrum(const SignalWindow& window);
std::vector<SpectrumSample> to_spectra(const RunRecord& record);

double window_rms(const SignalWindow& window);
Vector rms_series(const RunRecord& record);

/// Per-bin z-score statistics fitted on training spectra and reused verbatim
/// for every other bearing.
struct StandardizationStats {
  Vector mean;
  Vector stddev;
  Index clamped_bins = 0;

  static constexpr double kMinStd = 1e-12;

  Vector apply(const Vector& bins) const;
  std::vector<SpectrumSample> apply(std::span<const SpectrumSample> samples) const;

  nlohmann::json to_json() const;
  static StandardizationStats from_json(const nlohmann::json& j);
};

/// Fits per-bin mean and population std; zero-variance bins are clamped to
/// kMinStd and reported through dhi::warn.
StandardizationStats fit_standardization(std::span<const SpectrumSample> training);

struct StandardizedSet {
  std::vector<SpectrumSample> samples;
  StandardizationStats stats;
};
StandardizedSet standardize(std::span<const SpectrumSample> training);

enum class SynthGrowth { Exponential, Linear };

/// Synthetic run-to-failure generator.
///
/// Healthy windows are white noise. From window k0 = floor(fault_onset_fraction * n)
/// a periodic train of damped resonance bursts is added with amplitude
/// impulse_amplitude * e(k), where e(k) = exp(growth_rate * (k - k0)) or
/// 1 + growth_rate * (k - k0). The broadband noise floor follows the same
/// envelope, scaled by broadband_coupling.
struct SynthConfig {
  Index n_windows = 200;
  Index window_len = kPronostiaWindowLength;
  double sample_rate_hz = kPronostiaSampleRateHz;
  double noise_std = 0.1;
  double fault_onset_fraction = 0.2;
  double growth_rate = 0.015;
  SynthGrowth growth = SynthGrowth::Exponential;
  double broadband_coupling = 1.0;
  /// Draw the burst train phase per window; otherwise every window starts on a burst.
  bool random_phase = true;
  double impulse_frequency_hz = 160.0;
  double impulse_amplitude = 0.2;
  double resonance_hz = 3000.0;
  double damping_per_s = 900.0;
  std::uint64_t seed = 1;

  void validate() const;
  nlohmann::json to_json() const;
  static SynthConfig from_json(const nlohmann::json& j);
};

RunRecord synth_generate(const SynthConfig& config, const std::string& bearing_id = "synthetic");

}  // namespace dhi::ingestion
