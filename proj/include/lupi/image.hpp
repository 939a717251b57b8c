#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lupi/common.hpp"

namespace lupi {

// Row-major, channel-interleaved raster with values in [0, 1].
// 3 channels for visible images, 1 for infrared and intermediate ones.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<double> pixels;

  static Image create(std::size_t h, std::size_t w, std::size_t c, double fill = 0.0);

  double at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[(y * width + x) * channels + c];
  }
  double& at(std::size_t y, std::size_t x, std::size_t c) {
    return pixels[(y * width + x) * channels + c];
  }
  bool same_extents(const Image& other) const {
    return height == other.height && width == other.width && channels == other.channels;
  }
};

// Channel-mix weights; drawn once per image, not per pixel.
struct MixWeights {
  double alpha = 1.0;
  double beta = 1.0;
  double gamma = 1.0;
};

struct AugmentPolicy {
  std::size_t target_h = 24;
  std::size_t target_w = 12;
  double pad_fraction = 0.125;
  enum class PadMode { kZero, kMean };
  PadMode pad_mode = PadMode::kZero;
  double flip_prob = 0.5;
};

// (alpha*R + beta*G + gamma*B) / (alpha+beta+gamma), per pixel. The result is
// clamped to the per-pixel channel hull so rounding can never push a convex
// combination outside [min(R,G,B), max(R,G,B)].
Image mix_channels(const Image& img, const MixWeights& weights);

// Draws weights uniformly from [0,1) and returns them for reproducibility.
std::pair<Image, MixWeights> random_channel_mix(const Image& img, Rng& rng);

// Equal-weight mix; shares the mix kernel bit for bit.
Image to_grayscale(const Image& img);

Image resize_bilinear(const Image& img, std::size_t out_h, std::size_t out_w);

// Resize to the target extents, pad, random-crop back, flip with flip_prob.
Image augment(const Image& img, const AugmentPolicy& policy, Rng& rng);

// Binary PPM (P6, 3-channel) / PGM (P5, 1-channel), maxval 255, values mapped
// linearly to [0,1]. Writes go through a temp file and a rename.
Image read_image(const std::string& path);
void write_image(const Image& img, const std::string& path);

// Snap values to the 8-bit grid (k/255); what a write/read round trip yields.
Image quantize8(const Image& img);

}  // namespace lupi
