#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lupi/data.hpp"
#include "lupi/eval.hpp"
#include "lupi/losses.hpp"
#include "lupi/model.hpp"

namespace lupi {

// How the privileged intermediate images are derived from visible inputs.
// kNone is the two-stream baseline; kRandMixAug adds the spatial
// augmentation chain on top of the random channel mix.
enum class IntermediateMode { kNone, kGrayscale, kRandMix, kRandMixAug };

std::string intermediate_mode_name(IntermediateMode m);
IntermediateMode parse_intermediate_mode(const std::string& s);

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t iterations_per_epoch = 50;
  std::size_t batch_persons = 4;      // b_s
  std::size_t images_per_person = 2;  // n_p
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::size_t warmup_epochs = 2;  // linear lr ramp from 10% to 100%
  LossConfig loss;
  IntermediateMode intermediate_mode = IntermediateMode::kRandMix;
  std::uint64_t seed = 1;
  ModelConfig model;  // num_classes is always derived from the training set
};

struct IterationLog {
  std::size_t epoch = 0;
  std::size_t iteration = 0;
  double lr = 0.0;
  LossBreakdown loss;
};

struct EpochSnapshot {
  std::size_t epoch = 0;
  double rank1 = 0.0;
  double map = 0.0;
};

struct TrainLog {
  std::vector<IterationLog> iterations;
  std::vector<EpochSnapshot> snapshots;  // one per epoch when a held-out split exists
  double wall_seconds = 0.0;
  std::uint64_t mix_invocations = 0;  // intermediate derivations performed

  std::string to_jsonl() const;
};

struct TrainResult {
  ModelParams params;
  TrainLog log;
};

// One LUPI training run: P*K batches, intermediate derivation per mode,
// three-stream forward, combined loss, momentum SGD with warm-up.
// Deterministic given cfg.seed. A non-finite loss aborts with the iteration
// index. With a held-out split, records a cross-modal snapshot per epoch.
TrainResult train(const Dataset& train_ds, const TrainConfig& cfg,
                  const Dataset* held_out = nullptr);

// Pure forward embedding of every sample; rows come back unit-normalized.
std::vector<EmbeddingRecord> embed_dataset(const ModelParams& params, const Dataset& ds,
                                           std::size_t batch_size = 32);

// Embeds the split and scores query-modality records against the gallery.
EvalReport evaluate_with_model(const ModelParams& params, const Dataset& test_ds,
                               const EvalProtocol& protocol);

struct AblationCell {
  IntermediateMode mode = IntermediateMode::kNone;
  bool triplet_on = false;
  bool color_free_on = false;
  EvalReport report;
};

struct AblationTable {
  std::vector<AblationCell> cells;
  std::string to_csv() const;  // mode,triplet,color_free,r1,r5,r10,map
};

// Trains the {mode} x {loss toggles} grid and evaluates each cell under the
// cross-modal protocol.
AblationTable run_ablation(const Dataset& train_ds, const Dataset& test_ds,
                           const TrainConfig& base_cfg, const EvalProtocol& protocol);

}  // namespace lupi
