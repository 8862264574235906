#pragma once

#include "dhi/ingestion.hpp"
#include "dhi/nn/adam.hpp"
#include "dhi/nn/checkpoint.hpp"
#include "dhi/nn/layers.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace dhi::skipae {

using Tensor = nn::Tensor3<Real>;

struct SkipAEConfig {
  Index input_length = 1280;
  Index latent_dim = 32;
  std::array<Index, 3> channels{8, 16, 32};
  Index kernel_size = 10;
  Index stride = 2;
  double leaky_slope = 0.01;
  bool skip_enabled = true;
  /// LeakyReLU after the latent batchnorm. Off by default: the rectifier squeezes
  /// the negative half of every feature by the leak slope.
  bool latent_activation = false;
  nn::BatchNormOptions batchnorm{};

  void validate() const;
  nlohmann::json to_json() const;
  static SkipAEConfig from_json(const nlohmann::json& j);
};

/// Encoder feature maps after each conv block, shallowest first
/// (8x636, 16x314, 32x153 for the default configuration).
struct SkipTaps {
  std::array<Tensor, 3> maps;
};

struct FeatureVector {
  Index index = 0;
  Vector z;
};

struct ShapeRecord {
  std::string layer;
  Index channels = 0;
  Index length = 0;
};

/// Skip-connection 1-D convolutional autoencoder.
///
///   encoder: 3 x [Conv(k, s) -> BN -> LeakyReLU] -> Flatten -> Dense(latent) -> BN (-> LeakyReLU)
///   decoder: Dense(flat) -> BN -> LeakyReLU -> reshape
///            3 x [ConcatConv1x1(h (+) tap) -> BN -> LeakyReLU -> DeConv(k, s) (-> BN -> LeakyReLU)]
///
/// The last DeConv is left linear so the reconstruction can follow z-scored
/// (signed) spectra. Taps are consumed deepest first. With skip_enabled false
/// the ConcatConv layers see only h.
class SkipAEModel {
 public:
  SkipAEModel(const SkipAEConfig& config, std::uint64_t seed);

  /// Records the pass so backward() can follow; fills `taps` when given.
  Tensor encode(const Tensor& x, bool training, SkipTaps* taps = nullptr,
                std::vector<ShapeRecord>* trace = nullptr);
  /// Throws StateError when skips are enabled and `taps` is missing or mismatched.
  Tensor decode(const Tensor& z, const SkipTaps* taps, bool training,
                std::vector<ShapeRecord>* trace = nullptr);
  Tensor forward(const Tensor& x, bool training, std::vector<ShapeRecord>* trace = nullptr);

  /// Backpropagates d(loss)/d(reconstruction) through the last forward().
  void backward(const Tensor& grad_reconstruction);

  /// Inference-mode features for a list of spectra, in order.
  std::vector<FeatureVector> extract_features(std::span<const ingestion::SpectrumSample> spectra,
                                              Index batch_size = 128);

  nn::ParameterRefs<Real> parameters();
  nn::BufferRefs<Real> buffers();
  std::vector<nn::LayerRecord> layer_records() const;
  const SkipAEConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }

  Index flat_size() const { return flat_channels_ * flat_length_; }
  std::array<Index, 3> encoder_lengths() const { return lengths_; }

 private:
  struct ConvBlock {
    nn::Conv1d<Real> conv;
    nn::BatchNorm1d<Real> bn;
    nn::Activation<Real> act;
  };
  struct DecoderStage {
    nn::ConcatConv1x1<Real> concat;
    nn::BatchNorm1d<Real> concat_bn;
    nn::Activation<Real> concat_act;
    nn::DeConv1d<Real> deconv;
    std::unique_ptr<nn::BatchNorm1d<Real>> bn;  // absent on the output stage
    std::unique_ptr<nn::Activation<Real>> act;
  };

  SkipAEConfig config_;
  std::uint64_t seed_;
  std::array<Index, 3> lengths_{};
  Index flat_channels_ = 0;
  Index flat_length_ = 0;

  std::vector<ConvBlock> encoder_;
  nn::Flatten<Real> flatten_{"encoder.flatten"};
  nn::Dense<Real> latent_;
  nn::BatchNorm1d<Real> latent_bn_;
  nn::Activation<Real> latent_act_;
  nn::Dense<Real> expand_;
  nn::BatchNorm1d<Real> expand_bn_;
  nn::Activation<Real> expand_act_;
  std::vector<DecoderStage> decoder_;

  bool recorded_ = false;
};

/// Mean over samples of the squared L2 reconstruction error (sum over bins).
double reconstruction_loss(const Tensor& x, const Tensor& reconstruction);
/// Gradient of reconstruction_loss with respect to the reconstruction.
Tensor reconstruction_loss_grad(const Tensor& x, const Tensor& reconstruction);

/// Stacks spectra into a (n, 1, bins) tensor.
Tensor stack_spectra(std::span<const ingestion::SpectrumSample> spectra);

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
};

struct TrainOptions {
  nn::OptimizerConfig optimizer{};
  std::uint64_t seed = 0;
  /// First epoch to run, for resuming from a checkpoint taken at this epoch.
  int start_epoch = 0;
  /// Called after every epoch with the epoch just finished.
  std::function<void(const EpochRecord&, SkipAEModel&)> on_epoch;
};

/// Adam on the reconstruction loss with per-epoch shuffled mini-batches. The
/// shuffle for epoch e depends only on (seed, e), so resumed runs replay the
/// same batches. Throws NumericalError on a non-finite loss.
std::vector<EpochRecord> train_skipae(SkipAEModel& model, const Tensor& dataset,
                                      const TrainOptions& options);

void save_skipae(SkipAEModel& model, const std::filesystem::path& dir,
                 const nlohmann::json& state = nlohmann::json::object());
/// Rebuilds the model from a checkpoint directory; `state` receives the saved state block.
SkipAEModel load_skipae(const std::filesystem::path& dir, nlohmann::json* state = nullptr);

}  // namespace dhi::skipae
