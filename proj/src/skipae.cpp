#include "dhi/skipae.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace dhi::skipae {

using nlohmann::json;

void SkipAEConfig::validate() const {
  if (input_length < kernel_size) throw ConfigError("skipae: input_length shorter than kernel");
  if (latent_dim < 1) throw ConfigError("skipae: latent_dim must be >= 1");
  for (auto c : channels) {
    if (c < 1) throw ConfigError("skipae: channel counts must be positive");
  }
  if (kernel_size < 1 || stride < 1) throw ConfigError("skipae: kernel/stride must be positive");
  if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) {
    throw ConfigError("skipae: leaky_slope must lie in [0, 1)");
  }
}

json SkipAEConfig::to_json() const {
  return json{{"input_length", input_length},
              {"latent_dim", latent_dim},
              {"channels", channels},
              {"kernel_size", kernel_size},
              {"stride", stride},
              {"leaky_slope", leaky_slope},
              {"skip_enabled", skip_enabled},
              {"latent_activation", latent_activation},
              {"batchnorm_epsilon", batchnorm.epsilon},
              {"batchnorm_momentum", batchnorm.momentum}};
}

SkipAEConfig SkipAEConfig::from_json(const json& j) {
  SkipAEConfig c;
  c.input_length = j.value("input_length", c.input_length);
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  if (j.contains("channels")) c.channels = j.at("channels").get<std::array<Index, 3>>();
  c.kernel_size = j.value("kernel_size", c.kernel_size);
  c.stride = j.value("stride", c.stride);
  c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
  c.skip_enabled = j.value("skip_enabled", c.skip_enabled);
  c.latent_activation = j.value("latent_activation", c.latent_activation);
  c.batchnorm.epsilon = j.value("batchnorm_epsilon", c.batchnorm.epsilon);
  c.batchnorm.momentum = j.value("batchnorm_momentum", c.batchnorm.momentum);
  return c;
}

namespace {

Index conv_len(Index l, const SkipAEConfig& c) {
  return nn::conv1d_output_length(l, c.kernel_size, c.stride);
}

void push_shape(std::vector<ShapeRecord>* trace, const std::string& layer, const Tensor& t) {
  if (trace != nullptr) trace->push_back({layer, t.channels(), t.length()});
}

}  // namespace

SkipAEModel::SkipAEModel(const SkipAEConfig& config, std::uint64_t seed)
    : config_(config),
      seed_(seed),
      latent_("encoder.latent", 1, 1),
      latent_bn_("encoder.latent_bn", config.latent_dim, config.batchnorm),
      latent_act_("encoder.latent_act", nn::LayerSpec::leaky_relu(config.leaky_slope)),
      expand_("decoder.expand", 1, 1),
      expand_bn_("decoder.expand_bn", 1, config.batchnorm),
      expand_act_("decoder.expand_act", nn::LayerSpec::leaky_relu(config.leaky_slope)) {
  config_.validate();
  const auto leaky = nn::LayerSpec::leaky_relu(config_.leaky_slope);
  const auto& ch = config_.channels;

  Index length = config_.input_length;
  Index in_ch = 1;
  for (int i = 0; i < 3; ++i) {
    length = conv_len(length, config_);
    if (length < 1) throw ConfigError("skipae: input too short for three conv stages");
    lengths_[static_cast<std::size_t>(i)] = length;
    const std::string base = "encoder.conv" + std::to_string(i + 1);
    encoder_.push_back(ConvBlock{
        nn::Conv1d<Real>(base, in_ch, ch[static_cast<std::size_t>(i)], config_.kernel_size,
                         config_.stride),
        nn::BatchNorm1d<Real>(base + "_bn", ch[static_cast<std::size_t>(i)], config_.batchnorm),
        nn::Activation<Real>(base + "_act", leaky)});
    in_ch = ch[static_cast<std::size_t>(i)];
  }
  flat_channels_ = ch[2];
  flat_length_ = lengths_[2];
  const Index flat = flat_size();

  latent_ = nn::Dense<Real>("encoder.latent", flat, config_.latent_dim);
  expand_ = nn::Dense<Real>("decoder.expand", config_.latent_dim, flat);
  expand_bn_ = nn::BatchNorm1d<Real>("decoder.expand_bn", flat, config_.batchnorm);

  // Decoder stage j consumes tap (2 - j) and upsamples towards tap (1 - j).
  for (int j = 0; j < 3; ++j) {
    const auto tap = static_cast<std::size_t>(2 - j);
    const Index h_ch = ch[tap];
    const Index out_ch = j < 2 ? ch[tap - 1] : 1;
    const Index concat_in = config_.skip_enabled ? 2 * h_ch : h_ch;
    const std::string base = "decoder.stage" + std::to_string(j + 1);
    const Index up_len = nn::deconv1d_output_length(lengths_[tap], config_.kernel_size,
                                                   config_.stride);
    const Index want = j < 2 ? lengths_[tap - 1] : config_.input_length;
    if (up_len != want) {
      throw ConfigError("skipae: decoder stage " + std::to_string(j + 1) + " produces length " +
                        std::to_string(up_len) + " but the matching encoder map has " +
                        std::to_string(want));
    }
    DecoderStage stage{
        nn::ConcatConv1x1<Real>(base + ".concat", concat_in, h_ch),
        nn::BatchNorm1d<Real>(base + ".concat_bn", h_ch, config_.batchnorm),
        nn::Activation<Real>(base + ".concat_act", leaky),
        nn::DeConv1d<Real>(base + ".deconv", h_ch, out_ch, config_.kernel_size, config_.stride),
        nullptr,
        nullptr};
    if (j < 2) {
      stage.bn = std::make_unique<nn::BatchNorm1d<Real>>(base + ".deconv_bn", out_ch,
                                                         config_.batchnorm);
      stage.act = std::make_unique<nn::Activation<Real>>(base + ".deconv_act", leaky);
    }
    decoder_.push_back(std::move(stage));
  }

  Rng rng(derive_seed(seed, 0xAE));
  const double gain = nn::rectifier_gain(config_.leaky_slope);
  for (auto& block : encoder_) block.conv.reset_parameters(rng, gain);
  latent_.reset_parameters(rng, gain);
  expand_.reset_parameters(rng, gain);
  for (std::size_t j = 0; j < decoder_.size(); ++j) {
    decoder_[j].concat.reset_parameters(rng, gain);
    decoder_[j].deconv.reset_parameters(rng, j + 1 < decoder_.size() ? gain : 1.0);
  }
}

Tensor SkipAEModel::encode(const Tensor& x, bool training, SkipTaps* taps,
                           std::vector<ShapeRecord>* trace) {
  if (x.channels() != 1) {
    throw DimensionError("skipae encode: channel axis mismatch (got " +
                         std::to_string(x.channels()) + ", expected 1)");
  }
  if (x.length() != config_.input_length) {
    throw DimensionError("skipae encode: length axis mismatch (got " +
                         std::to_string(x.length()) + ", expected " +
                         std::to_string(config_.input_length) + ")");
  }
  Tensor h = x;
  for (std::size_t i = 0; i < encoder_.size(); ++i) {
    auto& block = encoder_[i];
    h = block.conv.forward(h);
    push_shape(trace, block.conv.name(), h);
    h = block.act.forward(block.bn.forward(h, training));
    if (taps != nullptr) taps->maps[i] = h;
  }
  h = flatten_.forward(h);
  push_shape(trace, "encoder.flatten", h);
  h = latent_.forward(h);
  push_shape(trace, latent_.name(), h);
  h = latent_bn_.forward(h, training);
  return config_.latent_activation ? latent_act_.forward(h) : h;
}

Tensor SkipAEModel::decode(const Tensor& z, const SkipTaps* taps, bool training,
                           std::vector<ShapeRecord>* trace) {
  if (z.sample_size() != config_.latent_dim) {
    throw DimensionError("skipae decode: feature axis mismatch (got " +
                         std::to_string(z.sample_size()) + ", expected " +
                         std::to_string(config_.latent_dim) + ")");
  }
  if (config_.skip_enabled) {
    if (taps == nullptr) throw StateError("skipae decode: skip taps are required");
    for (std::size_t i = 0; i < 3; ++i) {
      const auto& m = taps->maps[i];
      if (m.batch() != z.batch() || m.channels() != config_.channels[i] ||
          m.length() != lengths_[i]) {
        throw StateError("skipae decode: skip tap " + std::to_string(i + 1) + " has shape " +
                         m.shape_string() + ", expected " + std::to_string(z.batch()) + "x" +
                         std::to_string(config_.channels[i]) + "x" + std::to_string(lengths_[i]));
      }
    }
  }
  Tensor h = expand_.forward(z.reshaped(z.sample_size(), 1));
  push_shape(trace, expand_.name(), h);
  h = expand_act_.forward(expand_bn_.forward(h, training));
  h = h.reshaped(flat_channels_, flat_length_);
  for (std::size_t j = 0; j < decoder_.size(); ++j) {
    auto& stage = decoder_[j];
    const Tensor empty(h.batch(), 0, h.length());
    const Tensor& tap = config_.skip_enabled ? taps->maps[2 - j] : empty;
    h = stage.concat.forward(h, tap);
    push_shape(trace, stage.concat.name(), h);
    h = stage.concat_act.forward(stage.concat_bn.forward(h, training));
    h = stage.deconv.forward(h);
    push_shape(trace, stage.deconv.name(), h);
    if (stage.bn) h = stage.act->forward(stage.bn->forward(h, training));
  }
  return h;
}

Tensor SkipAEModel::forward(const Tensor& x, bool training, std::vector<ShapeRecord>* trace) {
  SkipTaps taps;
  const Tensor z = encode(x, training, &taps, trace);
  Tensor out = decode(z, &taps, training, trace);
  recorded_ = true;
  return out;
}

void SkipAEModel::backward(const Tensor& grad_reconstruction) {
  if (!recorded_) throw StateError("skipae backward: no recorded forward pass");
  recorded_ = false;
  Tensor g = grad_reconstruction;
  std::array<Tensor, 3> tap_grads;
  for (std::size_t jj = decoder_.size(); jj-- > 0;) {
    auto& stage = decoder_[jj];
    if (stage.bn) g = stage.bn->backward(stage.act->backward(g));
    g = stage.deconv.backward(g);
    g = stage.concat_bn.backward(stage.concat_act.backward(g));
    auto grads = stage.concat.backward(g);
    tap_grads[2 - jj] = std::move(grads.b);
    g = std::move(grads.a);
  }
  g = g.reshaped(flat_size(), 1);
  g = expand_.backward(expand_bn_.backward(expand_act_.backward(g)));
  if (config_.latent_activation) g = latent_act_.backward(g);
  g = latent_.backward(latent_bn_.backward(g));
  g = flatten_.backward(g);
  for (std::size_t ii = encoder_.size(); ii-- > 0;) {
    if (config_.skip_enabled) g.data() += tap_grads[ii].data();
    auto& block = encoder_[ii];
    g = block.conv.backward(block.bn.backward(block.act.backward(g)));
  }
}

std::vector<FeatureVector> SkipAEModel::extract_features(
    std::span<const ingestion::SpectrumSample> spectra, Index batch_size) {
  std::vector<FeatureVector> out;
  out.reserve(spectra.size());
  const Tensor all = stack_spectra(spectra);
  for (Index start = 0; start < all.batch(); start += batch_size) {
    const Index stop = std::min(all.batch(), start + batch_size);
    std::vector<Index> idx;
    for (Index i = start; i < stop; ++i) idx.push_back(i);
    const Tensor z = encode(all.gather(idx), false);
    for (Index b = 0; b < z.batch(); ++b) {
      out.push_back({spectra[static_cast<std::size_t>(start + b)].index,
                     z.columns().col(b)});
    }
  }
  return out;
}

nn::ParameterRefs<Real> SkipAEModel::parameters() {
  nn::ParameterRefs<Real> params;
  auto append = [&params](nn::ParameterRefs<Real> more) {
    params.insert(params.end(), more.begin(), more.end());
  };
  for (auto& block : encoder_) {
    append(block.conv.parameters());
    append(block.bn.parameters());
  }
  append(latent_.parameters());
  append(latent_bn_.parameters());
  append(expand_.parameters());
  append(expand_bn_.parameters());
  for (auto& stage : decoder_) {
    append(stage.concat.parameters());
    append(stage.concat_bn.parameters());
    append(stage.deconv.parameters());
    if (stage.bn) append(stage.bn->parameters());
  }
  return params;
}

nn::BufferRefs<Real> SkipAEModel::buffers() {
  nn::BufferRefs<Real> bufs;
  auto append = [&bufs](nn::BufferRefs<Real> more) {
    bufs.insert(bufs.end(), more.begin(), more.end());
  };
  for (auto& block : encoder_) append(block.bn.buffers());
  append(latent_bn_.buffers());
  append(expand_bn_.buffers());
  for (auto& stage : decoder_) {
    append(stage.concat_bn.buffers());
    if (stage.bn) append(stage.bn->buffers());
  }
  return bufs;
}

std::vector<nn::LayerRecord> SkipAEModel::layer_records() const {
  std::vector<nn::LayerRecord> records;
  const auto leaky = nn::LayerSpec::leaky_relu(config_.leaky_slope);
  for (const auto& block : encoder_) {
    records.push_back({block.conv.name(), block.conv.spec()});
    records.push_back({block.conv.name() + "_bn", block.bn.spec()});
    records.push_back({block.conv.name() + "_act", leaky});
  }
  records.push_back({"encoder.flatten", nn::LayerSpec::flatten()});
  records.push_back({latent_.name(), latent_.spec()});
  records.push_back({latent_bn_.name(), latent_bn_.spec()});
  if (config_.latent_activation) records.push_back({"encoder.latent_act", leaky});
  records.push_back({expand_.name(), expand_.spec()});
  records.push_back({expand_bn_.name(), expand_bn_.spec()});
  records.push_back({"decoder.expand_act", leaky});
  for (const auto& stage : decoder_) {
    records.push_back({stage.concat.name(), stage.concat.spec()});
    records.push_back({stage.concat_bn.name(), stage.concat_bn.spec()});
    records.push_back({stage.concat.name() + "_act", leaky});
    records.push_back({stage.deconv.name(), stage.deconv.spec()});
    if (stage.bn) {
      records.push_back({stage.bn->name(), stage.bn->spec()});
      records.push_back({stage.deconv.name() + "_act", leaky});
    }
  }
  return records;
}

double reconstruction_loss(const Tensor& x, const Tensor& reconstruction) {
  if (!x.same_shape(reconstruction)) {
    throw DimensionError("reconstruction_loss: shape " + reconstruction.shape_string() +
                         " does not match input " + x.shape_string());
  }
  if (x.batch() == 0) throw DataError("reconstruction_loss: empty batch");
  return (x.data() - reconstruction.data()).squaredNorm() / static_cast<double>(x.batch());
}

Tensor reconstruction_loss_grad(const Tensor& x, const Tensor& reconstruction) {
  Tensor g(x.batch(), x.channels(), x.length());
  g.data() = (2.0 / static_cast<double>(x.batch())) * (reconstruction.data() - x.data());
  return g;
}

Tensor stack_spectra(std::span<const ingestion::SpectrumSample> spectra) {
  if (spectra.empty()) return Tensor(0, 1, 0);
  const Index bins = spectra.front().bins.size();
  Tensor t(static_cast<Index>(spectra.size()), 1, bins);
  for (std::size_t i = 0; i < spectra.size(); ++i) {
    if (spectra[i].bins.size() != bins) {
      throw DimensionError("stack_spectra: spectrum " + std::to_string(spectra[i].index) +
                           " has " + std::to_string(spectra[i].bins.size()) + " bins, expected " +
                           std::to_string(bins));
    }
    t.data().segment(static_cast<Index>(i) * bins, bins) = spectra[i].bins;
  }
  return t;
}

std::vector<EpochRecord> train_skipae(SkipAEModel& model, const Tensor& dataset,
                                      const TrainOptions& options) {
  options.optimizer.validate();
  if (dataset.batch() < 2) throw DataError("train_skipae: need at least two training spectra");
  const auto params = model.parameters();
  nn::zero_grads(params);
  std::vector<EpochRecord> history;
  for (int epoch = options.start_epoch; epoch < options.optimizer.max_epoch; ++epoch) {
    Rng rng(derive_seed(options.seed, static_cast<std::uint64_t>(epoch)));
    const auto batches = nn::make_batches(dataset.batch(), options.optimizer.batch_size, rng);
    double total = 0.0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const Tensor x = dataset.gather(batches[bi]);
      const Tensor xhat = model.forward(x, true);
      const double loss = reconstruction_loss(x, xhat);
      if (!std::isfinite(loss)) {
        std::ostringstream msg;
        msg << "train_skipae: non-finite loss at epoch " << epoch << ", batch " << bi
            << " (max |activation| = " << xhat.data().cwiseAbs().maxCoeff() << ")";
        throw NumericalError(msg.str());
      }
      total += loss * static_cast<double>(x.batch());
      model.backward(reconstruction_loss_grad(x, xhat));
      nn::adam_step(params, options.optimizer);
    }
    EpochRecord record{epoch, total / static_cast<double>(dataset.batch())};
    history.push_back(record);
    if (options.on_epoch) options.on_epoch(record, model);
  }
  return history;
}

void save_skipae(SkipAEModel& model, const std::filesystem::path& dir, const json& state) {
  nn::CheckpointManifest manifest;
  manifest.model = "skipae";
  manifest.seed = model.seed();
  manifest.layers = model.layer_records();
  manifest.state = state;
  manifest.state["config"] = model.config().to_json();
  nn::save_checkpoint(dir, manifest, model.parameters(), model.buffers());
}

SkipAEModel load_skipae(const std::filesystem::path& dir, json* state) {
  const auto header = nn::read_checkpoint_manifest(dir);
  if (header.model != "skipae") {
    throw DataError(dir.string() + ": checkpoint holds a '" + header.model + "' model");
  }
  SkipAEModel model(SkipAEConfig::from_json(header.state.at("config")), header.seed);
  auto manifest = nn::load_checkpoint(dir, model.parameters(), model.buffers());
  if (state != nullptr) *state = manifest.state;
  return model;
}

}  // namespace dhi::skipae
