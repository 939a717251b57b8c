#pragma once

#include <cstddef>
#include <vector>

#include "lupi/model.hpp"
#include "lupi/tensor.hpp"

namespace lupi {

struct LossConfig {
  double margin = 0.3;        // triplet margin M
  double alpha_c = 0.5;       // KL branch weight inside the color-free loss
  double lambda = 10.0;       // color-free trade-off in the combined loss
  double cf_threshold = 0.5;  // feature-difference switch of the color-free loss
  bool triplet_enabled = true;
  bool color_free_enabled = true;
};

struct TripletResult {
  Tensor value;                     // scalar
  std::size_t skipped_anchors = 0;  // anchors lacking a valid positive or negative
};

// Batch-hard triplet over three row sets: for each anchor, the hardest
// positive is the farthest same-identity row of `positives` and the hardest
// negative the closest different-identity row of `negatives`; the term is
// the mean over anchors of [margin + d_ap - d_an]_+ with Euclidean d.
// Anchors with no valid positive or negative are skipped and counted; if
// every anchor is skipped the call is rejected.
TripletResult triplet_term(const Tensor& anchors, const std::vector<int>& anchor_labels,
                           const Tensor& positives,
                           const std::vector<int>& positive_labels,
                           const Tensor& negatives,
                           const std::vector<int>& negative_labels, double margin);

// Sum of the three role rotations (V,T,Z), (T,Z,V), (Z,V,T): anchors from the
// first set, positives mined from the second, negatives from the third. The
// three batches must carry the same identity multiset.
TripletResult dual_triplet(const EmbeddingBatch& fv, const EmbeddingBatch& ft,
                           const EmbeddingBatch& fz, double margin);

// Two-set variant used when no intermediate stream exists: anchors in each
// main modality mine positives and negatives from the other one.
TripletResult cross_modal_triplet(const EmbeddingBatch& fa, const EmbeddingBatch& fb,
                                  double margin);

// Row i of fv and fz must come from the same source image. Per pair, the mean
// absolute feature difference above cf_threshold contributes itself;
// otherwise the pair contributes alpha_c * KL(softmax(logits_v) ||
// softmax(logits_z)). Returns the batch mean.
Tensor color_free(const EmbeddingBatch& fv, const EmbeddingBatch& fz, double alpha_c,
                  double cf_threshold);

// Mean softmax cross-entropy; labels must lie in [0, C).
Tensor identity_loss(const Tensor& logits, const std::vector<int>& labels);

struct LossBreakdown {
  double triplet = 0.0;
  double color_free = 0.0;
  double identity = 0.0;
  double total = 0.0;
  std::size_t skipped_anchors = 0;
};

struct TotalLoss {
  Tensor value;
  LossBreakdown breakdown;
};

// L = dual_triplet + lambda * color_free + identity, with the identity term
// covering the rows of all three streams.
TotalLoss total_loss(const EmbeddingBatch& fv, const EmbeddingBatch& ft,
                     const EmbeddingBatch& fz, const LossConfig& cfg);

}  // namespace lupi
