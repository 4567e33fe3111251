#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "memeclf/rng.hpp"
#include "memeclf/tensor.hpp"

namespace memeclf {

/// 8-bit interleaved RGB pixels, row-major.
struct RawImage {
  Index height = 0;
  Index width = 0;
  std::vector<std::uint8_t> rgb;  // height * width * 3

  std::uint8_t& at(Index r, Index c, Index ch) { return rgb[static_cast<std::size_t>((r * width + c) * 3 + ch)]; }
  std::uint8_t at(Index r, Index c, Index ch) const { return rgb[static_cast<std::size_t>((r * width + c) * 3 + ch)]; }
};

/// PNG, JPEG or binary PPM/PGM (P6/P5), chosen by content. Grayscale
/// inputs are replicated to three channels. Throws ImageError naming `path`.
RawImage decode_image(const std::string& path);

/// Binary PPM (P6, maxval 255).
std::string encode_ppm(const RawImage& image);
void write_ppm(const RawImage& image, const std::string& path);

/// Bilinear resampling with pixel-centre alignment and edge clamping; a
/// same-size request returns the input unchanged. `image` is [H x W x C].
Tensor<float> resize_bilinear(const Tensor<float>& image, Index height, Index width);

/// Decode -> [0, 1] -> bilinear resize -> (v - 0.5) / 0.5, giving an
/// [height x width x 3] tensor in [-1, 1].
Tensor<float> preprocess_image(const RawImage& image, Index height, Index width);
Tensor<float> preprocess_image(const std::string& path, Index height, Index width);

/// Normalized value of a black pixel.
inline constexpr float kFillValue = -1.0f;

/// Counter-clockwise rotation about the image centre with bilinear sampling;
/// samples falling outside the source take `fill`. Multiples of 90 degrees
/// use exact sines and cosines, so 0 is the identity and 180 a double flip.
Tensor<float> rotate(const Tensor<float>& image, double angle_deg, float fill = kFillValue);

/// Rotation by an angle drawn uniformly from [-max_deg, max_deg].
Tensor<float> augment_rotation(const Tensor<float>& image, RngStream& rng, double max_deg = 15.0);

}  // namespace memeclf
