#pragma once

#include "dhi/nn/layer_spec.hpp"
#include "dhi/nn/parameter.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace dhi::nn {

struct LayerRecord {
  std::string path;
  LayerSpec spec;
};

/// On-disk layout: `<dir>/manifest.json` plus one little-endian float64 file
/// per parameter (`<name>.f64`), per buffer, and optionally per Adam moment
/// (`<name>.adam_m.f64`, `<name>.adam_v.f64`).
struct CheckpointManifest {
  std::string model;
  std::uint64_t seed = 0;
  std::vector<LayerRecord> layers;
  nlohmann::json state = nlohmann::json::object();
};

void save_checkpoint(const std::filesystem::path& dir, const CheckpointManifest& manifest,
                     const ParameterRefs<Real>& params, const BufferRefs<Real>& buffers,
                     bool include_optimizer_state = true);

/// Loads values into already-constructed parameters. Names and shapes must
/// match the manifest exactly. Adam state is restored when present.
CheckpointManifest load_checkpoint(const std::filesystem::path& dir,
                                   const ParameterRefs<Real>& params,
                                   const BufferRefs<Real>& buffers);

CheckpointManifest read_checkpoint_manifest(const std::filesystem::path& dir);

void write_f64_file(const std::filesystem::path& path, const Vector& values);
Vector read_f64_file(const std::filesystem::path& path);

nlohmann::json layer_spec_to_json(const LayerSpec& spec);
LayerSpec layer_spec_from_json(const nlohmann::json& j);

}  // namespace dhi::nn
