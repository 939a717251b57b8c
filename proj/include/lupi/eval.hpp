#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lupi/common.hpp"
#include "lupi/data.hpp"

namespace lupi {

struct EmbeddingRecord {
  std::vector<double> feature;  // unit vector
  int identity = 0;
  int camera = 0;
  Modality modality = Modality::kVisible;
};

enum class ShotMode { kSingle, kMulti };

// Gallery-sampling protocol: single-shot keeps one image per identity per
// camera, multi-shot up to ten. Entries sharing both identity and camera
// with the query are dropped when exclude_same_camera is set, and always
// when query and gallery modalities coincide.
struct EvalProtocol {
  Modality query_modality = Modality::kInfrared;
  Modality gallery_modality = Modality::kVisible;
  ShotMode shot_mode = ShotMode::kSingle;
  bool exclude_same_camera = false;
  std::size_t num_trials = 10;
  std::uint64_t rng_seed = 0;
};

struct EvalReport {
  std::vector<double> cmc;  // cmc[k-1] = CMC(k), averaged over trials
  double map = 0.0;
  std::vector<double> per_trial_rank1;
  std::vector<double> per_trial_map;
  EvalProtocol protocol;
  std::size_t num_queries = 0;
  std::size_t gallery_size = 0;  // sampled gallery size of the first trial

  double rank_k(std::size_t k) const;  // CMC(k), clamped to the curve end
};

// Ranks each query against a per-trial sampled gallery by Euclidean distance
// on unit features (ties broken by gallery order), and averages CMC and mAP
// over trials. Rejects query identities absent from the gallery population.
EvalReport evaluate(const std::vector<EmbeddingRecord>& queries,
                    const std::vector<EmbeddingRecord>& gallery,
                    const EvalProtocol& protocol);

// Unbiased U-statistic estimate of MMD^2 under a sum of Gaussian kernels
// exp(-d^2 / (2 bw^2)). Arguments are ordered canonically inside, so the
// estimate is exactly symmetric in X and Y.
double mmd_squared_unbiased(const std::vector<std::vector<double>>& x,
                            const std::vector<std::vector<double>>& y,
                            const std::vector<double>& bandwidths);

// sqrt of the estimator floored at zero.
double mmd(const std::vector<std::vector<double>>& x,
           const std::vector<std::vector<double>>& y,
           const std::vector<double>& bandwidths);

struct DistanceHistograms {
  static constexpr std::size_t kBins = 50;  // fixed bins over [0, 2]
  std::vector<std::uint64_t> positive;      // same identity, cross-modal
  std::vector<std::uint64_t> negative;
  double positive_mean = 0.0;
  double negative_mean = 0.0;
  std::uint64_t positive_count = 0;
  std::uint64_t negative_count = 0;
};

// Cosine distances (1 - dot) over all visible/infrared record pairs, split
// by identity match. Rejects single-modality inputs.
DistanceHistograms distance_histograms(const std::vector<EmbeddingRecord>& records);

// Deterministic serializations used by the CLI.
std::string eval_report_json(const EvalReport& report);
std::string histograms_csv(const DistanceHistograms& h);

}  // namespace lupi
