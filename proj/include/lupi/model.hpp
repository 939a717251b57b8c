#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lupi/data.hpp"
#include "lupi/tensor.hpp"

namespace lupi {

struct ModelConfig {
  std::size_t feature_dim = 64;  // d
  std::size_t num_classes = 20;  // C
  std::size_t stem_width = 6;
  std::size_t trunk_width1 = 12;
  std::size_t trunk_width2 = 24;
};

// Three-stream embedding network: one stem (first conv block) per modality,
// then a shared trunk (two conv blocks with stride-2 pooling, global average
// pool, linear projection to d) and a shared identity classifier. Trunk and
// classifier tensors exist exactly once in the map; the three streams differ
// only in which stem they read, and the stems differ only in input channels.
struct ModelParams {
  ModelConfig config;
  ParamMap tensors;
};

// Kaiming-style fan-in scaled uniform init; classifier bias is zero.
// Each tensor draws from its own named stream, so the layout of the map
// never changes the values.
ModelParams init_params(std::uint64_t seed, const ModelConfig& cfg);

struct EmbeddingBatch {
  Tensor features;                 // (b, d), rows L2-normalized
  Tensor logits;                   // (b, C), from pre-normalization features
  std::vector<int> labels;         // b identity ids
  std::vector<Modality> modality;  // per-row tag
};

// Forward pass of one modality stream. Records tape nodes when a tape is
// active on this thread, otherwise a pure evaluation. The batch must be
// channel-compatible with the tagged stem (3 for V, 1 for I and Z).
EmbeddingBatch embed(const ModelParams& params, const std::vector<Image>& batch,
                     Modality tag, const std::vector<int>& labels);

// Registers every parameter on the tape so a subsequent backward() yields a
// complete gradient map even for streams that were not exercised.
void watch_all(Tape& tape, const ModelParams& params);

// (b, c, h, w) constant tensor from channel-interleaved images.
Tensor images_to_tensor(const std::vector<Image>& batch);

std::string stem_prefix(Modality tag);

}  // namespace lupi
