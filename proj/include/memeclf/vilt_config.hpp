#pragma once

#include <string>

#include "memeclf/tensor.hpp"

namespace memeclf {

enum class Pooling { Cls, Mean };

/// Zeroes one modality's content embeddings before fusion.
enum class Ablation { None, TextOnly, ImageOnly };

std::string to_string(Pooling pooling);
std::string to_string(Ablation ablation);
Pooling parse_pooling(const std::string& text);
Ablation parse_ablation(const std::string& text);

struct ViltConfig {
  std::string profile = "desk";
  Index hidden_dim = 64;
  Index num_layers = 2;
  Index num_heads = 4;
  Index mlp_ratio = 4;
  Index patch_size = 16;
  Index image_height = 64;
  Index image_width = 64;
  Index max_text_len = 40;
  Index vocab_size = 1000;
  double dropout_head = 0.3;
  double dropout_encoder = 0.1;
  double eps = 1e-5;
  Index num_modal_types = 2;
  Pooling pooling = Pooling::Cls;
  Ablation ablation = Ablation::None;

  /// D=64, L=2, 4 heads, P=16, 64x64 images, T=40.
  static ViltConfig desk(Index vocab_size = 1000);
  /// D=768, L=12, 12 heads, P=32, 256x256 images, T=40. 256 is the 252
  /// resize target rounded up to the next multiple of the patch size.
  static ViltConfig paper(Index vocab_size = 30522);
  static ViltConfig for_profile(const std::string& profile, Index vocab_size);

  Index head_dim() const { return hidden_dim / num_heads; }
  Index mlp_dim() const { return mlp_ratio * hidden_dim; }
  Index patch_dim() const { return patch_size * patch_size * 3; }
  Index grid_rows() const { return image_height / patch_size; }
  Index grid_cols() const { return image_width / patch_size; }
  Index num_patches() const { return grid_rows() * grid_cols(); }
  Index sequence_length() const { return 1 + max_text_len + num_patches(); }

  /// Throws ConfigError on any violated invariant.
  void validate() const;
};

}  // namespace memeclf
