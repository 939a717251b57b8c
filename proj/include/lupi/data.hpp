#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lupi/common.hpp"
#include "lupi/image.hpp"

namespace lupi {

enum class Modality { kVisible, kInfrared, kIntermediate };

std::string modality_name(Modality m);     // "V", "I", "Z"
Modality parse_modality(const std::string& s);

// One labeled capture. Visible samples are 3-channel, infrared 1-channel.
struct Sample {
  Image image;
  int identity = 0;
  int camera = 0;
  Modality modality = Modality::kVisible;
};

enum class Split { kTrain, kTest };

// Immutable after construction; id_index maps identity -> sample indices per
// modality for the P*K sampler.
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::vector<Sample> samples, Split split);

  const std::vector<Sample>& samples() const { return samples_; }
  Split split() const { return split_; }
  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }

  const std::vector<int>& identities() const { return identities_; }
  // Sample indices of one identity in one modality (empty if none).
  const std::vector<std::size_t>& indices_of(int identity, Modality m) const;

 private:
  std::vector<Sample> samples_;
  Split split_ = Split::kTrain;
  std::vector<int> identities_;  // sorted, unique
  std::map<std::pair<int, int>, std::vector<std::size_t>> id_index_;
};

struct SynthConfig {
  std::size_t num_identities = 20;  // per split; test identities are disjoint
  std::size_t images_per_identity_per_modality = 6;
  std::size_t height = 24;
  std::size_t width = 12;
  std::size_t num_cameras_v = 2;
  std::size_t num_cameras_i = 2;
  double color_signal_strength = 1.0;
  double texture_signal_strength = 0.6;
  double noise_level = 0.3;
  std::uint64_t rng_seed = 1;
};

struct SynthDataset {
  Dataset train;
  Dataset test;
};

// Synthetic visible/infrared corpus with controllable latent factors.
//
// Each identity owns a cell-quantized texture plate shared by both
// modalities and a visible-only hue: per-channel contrast offsets that sum
// to zero, so an equal-weight channel mix recovers the plate. Hue strength
// and channel roles vary per identity, which makes color an easy identity
// cue inside the visible modality and a dead end across modalities (the
// color trap). Infrared renders the plate under a per-image contrast gain
// and brightness shift. noise_level gates every nuisance factor: pixel
// noise, spatial jitter, camera tints, and the infrared gain spread.
//
// All rendering happens on the integer 8-bit grid, so datasets survive a
// PPM/PGM export/ingest round trip unchanged.
SynthDataset generate_synthetic(const SynthConfig& cfg);

// The identity's noise-free texture plate (what both modalities share).
Image synth_texture_plate(const SynthConfig& cfg, int identity);

struct BatchTriple {
  std::vector<Sample> visible;
  std::vector<Sample> infrared;
  std::vector<int> labels;  // one per row; row i of both halves shares labels[i]
  std::vector<std::size_t> visible_indices;  // positions in Dataset::samples()
  std::vector<std::size_t> infrared_indices;
};

// Identity-balanced P*K sampling: persons_per_batch identities without
// replacement, images_per_person picks per modality (with replacement only
// when an identity has fewer images than requested).
BatchTriple pk_sample(const Dataset& ds, std::size_t persons_per_batch,
                      std::size_t images_per_person, Rng& rng);

// Manifest lines: relative_path,identity,camera,modality  (modality V or I).
Dataset ingest_directory(const std::string& dir, const std::string& manifest_name,
                         Split split);
void export_directory(const Dataset& ds, const std::string& dir,
                      const std::string& manifest_name = "manifest.csv");

}  // namespace lupi
