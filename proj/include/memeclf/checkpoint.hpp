#pragma once

#include <optional>
#include <string>

#include "memeclf/model_params.hpp"
#include "memeclf/text.hpp"
#include "memeclf/vilt_config.hpp"

namespace memeclf {

inline constexpr int kCheckpointFormat = 1;

/// A checkpoint directory holds
///   config.json  model config, profile and format_version
///   index.json   parameter name -> {file, shape}
///   <name>.bin   little-endian float32 values, row-major
///   vocab.json   when a vocabulary is given
/// The directory is assembled under a temporary name and renamed into place.
void save_checkpoint(const std::string& dir, const ModelParams<float>& params, const ViltConfig& config,
                     const Vocab* vocab = nullptr);

struct Checkpoint {
  ViltConfig config;
  ModelParams<float> params;
  std::optional<Vocab> vocab;
};

/// Throws IoError for unreadable files and ShapeError when the tensors fail
/// the shape audit for the stored config.
Checkpoint load_checkpoint(const std::string& dir);

std::string config_to_json(const ViltConfig& config);
ViltConfig config_from_json(const std::string& text);

}  // namespace memeclf
