#include "lupi/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace lupi {

std::string modality_name(Modality m) {
  switch (m) {
    case Modality::kVisible: return "V";
    case Modality::kInfrared: return "I";
    case Modality::kIntermediate: return "Z";
  }
  return "?";
}

Modality parse_modality(const std::string& s) {
  if (s == "V" || s == "v") return Modality::kVisible;
  if (s == "I" || s == "i") return Modality::kInfrared;
  if (s == "Z" || s == "z") return Modality::kIntermediate;
  fail("unknown modality '" + s + "' (expected V, I, or Z)");
}

Dataset::Dataset(std::vector<Sample> samples, Split split)
    : samples_(std::move(samples)), split_(split) {
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    const Sample& s = samples_[i];
    if (s.modality == Modality::kVisible && s.image.channels != 3)
      fail("Dataset: visible sample " + std::to_string(i) + " has " +
           std::to_string(s.image.channels) + " channels, expected 3");
    if (s.modality == Modality::kInfrared && s.image.channels != 1)
      fail("Dataset: infrared sample " + std::to_string(i) + " has " +
           std::to_string(s.image.channels) + " channels, expected 1");
    if (s.modality == Modality::kIntermediate)
      fail("Dataset: intermediate images are derived during training, not stored");
    for (double v : s.image.pixels)
      if (v < 0.0 || v > 1.0)
        fail("Dataset: sample " + std::to_string(i) + " has pixels outside [0,1]");
    id_index_[{s.identity, static_cast<int>(s.modality)}].push_back(i);
  }
  for (const auto& [key, idx] : id_index_)
    if (identities_.empty() || identities_.back() != key.first)
      identities_.push_back(key.first);
  std::sort(identities_.begin(), identities_.end());
  identities_.erase(std::unique(identities_.begin(), identities_.end()), identities_.end());

  if (split_ == Split::kTrain) {
    for (int id : identities_) {
      if (indices_of(id, Modality::kVisible).empty() ||
          indices_of(id, Modality::kInfrared).empty())
        fail("Dataset: train identity " + std::to_string(id) +
             " is missing one modality");
    }
  }
}

const std::vector<std::size_t>& Dataset::indices_of(int identity, Modality m) const {
  static const std::vector<std::size_t> kEmpty;
  auto it = id_index_.find({identity, static_cast<int>(m)});
  return it == id_index_.end() ? kEmpty : it->second;
}

// ---- synthetic generator ----------------------------------------------------

namespace {

constexpr int kCellSize = 4;
constexpr int kMidLevel = 128;
constexpr int kCellAmp = 12;       // high-frequency detail
constexpr double kWaveAmp1 = 28.0;  // low-frequency layout modes
constexpr double kWaveAmp2 = 20.0;  // plate levels stay within [68, 188]

// Channel roles for the hue offsets: which of (R,G,B) gets +o, -o, 0.
constexpr std::array<std::array<int, 3>, 6> kHuePerms = {{
    {{+1, -1, 0}}, {{+1, 0, -1}}, {{-1, +1, 0}}, {{0, +1, -1}}, {{-1, 0, +1}}, {{0, -1, +1}},
}};

struct IdentityLatents {
  std::vector<int> plate;     // height*width texture levels
  std::vector<int> hue_wave;  // signed hue offsets; +/-/0 roles sum to zero per pixel
  std::array<int, 3> hue_roles{};
};

// Texture = two identity-specific low-frequency waves (the global layout a
// pooled representation can read) plus a cell grid of high-frequency detail.
std::vector<int> make_plate(const SynthConfig& cfg, int identity) {
  Rng rng = make_stream(cfg.rng_seed, stream::kSynth, 1000u + static_cast<std::uint64_t>(identity));
  const std::size_t cells_y = (cfg.height + kCellSize - 1) / kCellSize;
  const std::size_t cells_x = (cfg.width + kCellSize - 1) / kCellSize;
  std::vector<int> cells(cells_y * cells_x);
  for (auto& c : cells) c = static_cast<int>(rng.uniform_int(-kCellAmp, kCellAmp));

  struct Wave {
    double fy, fx, phase;
  };
  Wave waves[2];
  for (auto& w : waves) {
    do {
      w.fy = static_cast<double>(rng.uniform_int(0, 2));
      w.fx = static_cast<double>(rng.uniform_int(0, 2));
    } while (w.fy == 0.0 && w.fx == 0.0);
    w.phase = rng.uniform(0.0, 2.0 * M_PI);
  }

  std::vector<int> plate(cfg.height * cfg.width);
  for (std::size_t y = 0; y < cfg.height; ++y) {
    for (std::size_t x = 0; x < cfg.width; ++x) {
      const double yy = static_cast<double>(y) / static_cast<double>(cfg.height);
      const double xx = static_cast<double>(x) / static_cast<double>(cfg.width);
      const double layout =
          kWaveAmp1 * std::cos(2.0 * M_PI * (waves[0].fy * yy + waves[0].fx * xx) + waves[0].phase) +
          kWaveAmp2 * std::cos(2.0 * M_PI * (waves[1].fy * yy + waves[1].fx * xx) + waves[1].phase);
      const double detail = static_cast<double>(cells[(y / kCellSize) * cells_x + (x / kCellSize)]);
      plate[y * cfg.width + x] =
          kMidLevel + static_cast<int>(std::lround(cfg.texture_signal_strength * (layout + detail)));
    }
  }
  return plate;
}

// The visible-only color cue: an identity-specific low-frequency wave,
// independent of the texture, written into the channels as (+o, -o, 0).
// Inside the visible modality it is the strongest identity signal; a single
// channel reads texture corrupted by it, and only the channel mean (or a
// random mix, in expectation) recovers the shared texture.
IdentityLatents make_latents(const SynthConfig& cfg, int identity) {
  constexpr double kHueAmp = 60.0;
  IdentityLatents lat;
  lat.plate = make_plate(cfg, identity);
  Rng rng = make_stream(cfg.rng_seed, stream::kSynth, 1500u + static_cast<std::uint64_t>(identity));
  const double strength = cfg.color_signal_strength * (0.5 + 0.3 * rng.uniform());
  double fy, fx;
  do {
    fy = static_cast<double>(rng.uniform_int(0, 2));
    fx = static_cast<double>(rng.uniform_int(0, 2));
  } while (fy == 0.0 && fx == 0.0);
  const double phase = rng.uniform(0.0, 2.0 * M_PI);
  lat.hue_roles = kHuePerms[static_cast<std::size_t>(rng.uniform_int(0, 5))];
  lat.hue_wave.resize(cfg.height * cfg.width);
  for (std::size_t y = 0; y < cfg.height; ++y)
    for (std::size_t x = 0; x < cfg.width; ++x) {
      const double yy = static_cast<double>(y) / static_cast<double>(cfg.height);
      const double xx = static_cast<double>(x) / static_cast<double>(cfg.width);
      lat.hue_wave[y * cfg.width + x] = static_cast<int>(
          std::lround(strength * kHueAmp * std::cos(2.0 * M_PI * (fy * yy + fx * xx) + phase)));
    }
  return lat;
}

int clamp255(long v) { return static_cast<int>(std::clamp(v, 0l, 255l)); }


// Detection-box misalignment artifact: a mid-gray band on one image edge,
// width gated by noise_level. The pad-and-crop augmentation produces the
// same artifact family during training.
void apply_border_band(Image& img, double noise_level, Rng& rng) {
  const long wmax = std::lround(10.0 * noise_level);
  if (wmax <= 0) return;
  const long side = rng.uniform_int(0, 3);
  const long width = rng.uniform_int(0, std::min(wmax, static_cast<long>(
      std::min(img.height, img.width) / 3)));
  if (width == 0) return;
  const double fill = static_cast<double>(kMidLevel) / 255.0;
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      const bool in_band = (side == 0 && y < static_cast<std::size_t>(width)) ||
                           (side == 1 && y >= img.height - static_cast<std::size_t>(width)) ||
                           (side == 2 && x < static_cast<std::size_t>(width)) ||
                           (side == 3 && x >= img.width - static_cast<std::size_t>(width));
      if (in_band)
        for (std::size_t c = 0; c < img.channels; ++c) img.at(y, x, c) = fill;
    }
}

Image render_visible(const SynthConfig& cfg, const IdentityLatents& lat, int identity,
                     std::size_t image_index, const std::array<int, 3>& cam_tint) {
  Rng rng = make_stream(cfg.rng_seed, stream::kSynth, 2000u + static_cast<std::uint64_t>(identity),
                        image_index);
  const long jspan = std::lround(8.0 * cfg.noise_level);
  const long dy = jspan > 0 ? rng.uniform_int(-jspan, jspan) : 0;
  const long dx = jspan > 0 ? rng.uniform_int(-jspan, jspan) : 0;
  const double noise_sigma = 24.0 * cfg.noise_level;

  Image img = Image::create(cfg.height, cfg.width, 3);
  const long h = static_cast<long>(cfg.height), w = static_cast<long>(cfg.width);
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      const long sy = ((y + dy) % h + h) % h;
      const long sx = ((x + dx) % w + w) % w;
      const int t = lat.plate[static_cast<std::size_t>(sy * w + sx)];
      const int o = lat.hue_wave[static_cast<std::size_t>(sy * w + sx)];
      for (std::size_t c = 0; c < 3; ++c) {
        long level = t + lat.hue_roles[c] * o + cam_tint[c];
        if (noise_sigma > 0.0) level += std::lround(rng.normal() * noise_sigma);
        img.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c) =
            static_cast<double>(clamp255(level)) / 255.0;
      }
    }
  }
  apply_border_band(img, cfg.noise_level, rng);
  return img;
}

// The infrared sensor is modeled as an unknown per-image spectral response:
// a signed fraction of the hue component leaks into the capture, so the
// infrared domain is a family of channel mixes around the pure texture.
// noise_level gates the response spread along with gain, brightness, jitter
// and pixel noise; at zero every capture is the texture plate itself.
Image render_infrared(const SynthConfig& cfg, const IdentityLatents& lat, int identity,
                      std::size_t image_index, int cam_tint) {
  Rng rng = make_stream(cfg.rng_seed, stream::kSynth, 2500u + static_cast<std::uint64_t>(identity),
                        image_index);
  const long jspan = std::lround(8.0 * cfg.noise_level);
  const long dy = jspan > 0 ? rng.uniform_int(-jspan, jspan) : 0;
  const long dx = jspan > 0 ? rng.uniform_int(-jspan, jspan) : 0;
  const double response_span = std::min(1.0, 3.0 * cfg.noise_level);
  const double cam_sign = (image_index % cfg.num_cameras_i) % 2 == 0 ? -1.0 : 1.0;
  const double response =
      response_span > 0.0
          ? cam_sign * 0.55 * response_span + rng.uniform(-0.45, 0.45) * response_span
          : 0.0;
  const double gain = 1.0 + cfg.noise_level * rng.uniform(-0.6, 0.6);
  const long bright = std::lround(cfg.noise_level * rng.uniform(-16.0, 16.0));
  const double noise_sigma = 24.0 * cfg.noise_level;

  Image img = Image::create(cfg.height, cfg.width, 1);
  const long h = static_cast<long>(cfg.height), w = static_cast<long>(cfg.width);
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      const long sy = ((y + dy) % h + h) % h;
      const long sx = ((x + dx) % w + w) % w;
      const int t = lat.plate[static_cast<std::size_t>(sy * w + sx)];
      const int o = lat.hue_wave[static_cast<std::size_t>(sy * w + sx)];
      long level = kMidLevel +
                   std::lround(gain * (static_cast<double>(t - kMidLevel) + response * o)) +
                   bright + cam_tint;
      if (noise_sigma > 0.0) level += std::lround(rng.normal() * noise_sigma);
      img.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), 0) =
          static_cast<double>(clamp255(level)) / 255.0;
    }
  }
  apply_border_band(img, cfg.noise_level, rng);
  return img;
}

Dataset generate_split(const SynthConfig& cfg, Split split) {
  const int id_base = split == Split::kTrain ? 0 : static_cast<int>(cfg.num_identities);

  std::vector<std::array<int, 3>> tints_v(cfg.num_cameras_v);
  for (std::size_t c = 0; c < cfg.num_cameras_v; ++c) {
    Rng rng = make_stream(cfg.rng_seed, stream::kSynth, 3000u + c);
    for (auto& t : tints_v[c])
      t = static_cast<int>(std::lround(cfg.noise_level * rng.uniform(-14.0, 14.0)));
  }
  std::vector<int> tints_i(cfg.num_cameras_i);
  for (std::size_t c = 0; c < cfg.num_cameras_i; ++c) {
    Rng rng = make_stream(cfg.rng_seed, stream::kSynth, 3500u + c);
    tints_i[c] = static_cast<int>(std::lround(cfg.noise_level * rng.uniform(-10.0, 10.0)));
  }

  std::vector<Sample> samples;
  samples.reserve(cfg.num_identities * cfg.images_per_identity_per_modality * 2);
  for (std::size_t k = 0; k < cfg.num_identities; ++k) {
    const int identity = id_base + static_cast<int>(k);
    const IdentityLatents lat = make_latents(cfg, identity);
    for (std::size_t j = 0; j < cfg.images_per_identity_per_modality; ++j) {
      const std::size_t cam_v = j % cfg.num_cameras_v;
      samples.push_back(Sample{render_visible(cfg, lat, identity, j, tints_v[cam_v]),
                               identity, static_cast<int>(cam_v), Modality::kVisible});
      const std::size_t cam_i = j % cfg.num_cameras_i;
      samples.push_back(Sample{render_infrared(cfg, lat, identity, j, tints_i[cam_i]),
                               identity, static_cast<int>(cfg.num_cameras_v + cam_i),
                               Modality::kInfrared});
    }
  }
  return Dataset(std::move(samples), split);
}

}  // namespace

SynthDataset generate_synthetic(const SynthConfig& cfg) {
  if (cfg.num_identities == 0 || cfg.images_per_identity_per_modality == 0 ||
      cfg.num_cameras_v == 0 || cfg.num_cameras_i == 0)
    fail("generate_synthetic: counts must be positive");
  if (cfg.color_signal_strength < 0.0 || cfg.color_signal_strength > 1.0 ||
      cfg.texture_signal_strength < 0.0 || cfg.texture_signal_strength > 1.0)
    fail("generate_synthetic: signal strengths must lie in [0,1]");
  return SynthDataset{generate_split(cfg, Split::kTrain), generate_split(cfg, Split::kTest)};
}

Image synth_texture_plate(const SynthConfig& cfg, int identity) {
  const std::vector<int> plate = make_plate(cfg, identity);
  Image img = Image::create(cfg.height, cfg.width, 1);
  for (std::size_t i = 0; i < plate.size(); ++i)
    img.pixels[i] = static_cast<double>(plate[i]) / 255.0;
  return img;
}

// ---- sampling ---------------------------------------------------------------

namespace {

std::vector<std::size_t> pick_for_identity(const std::vector<std::size_t>& pool,
                                           std::size_t count, Rng& rng) {
  std::vector<std::size_t> out;
  out.reserve(count);
  if (pool.size() >= count) {
    std::vector<std::size_t> shuffled = pool;
    for (std::size_t i = 0; i < count; ++i) {
      const auto j = static_cast<std::size_t>(
          rng.uniform_int(static_cast<std::int64_t>(i), static_cast<std::int64_t>(shuffled.size()) - 1));
      std::swap(shuffled[i], shuffled[j]);
      out.push_back(shuffled[i]);
    }
  } else {
    // Too few images: sample with replacement.
    for (std::size_t i = 0; i < count; ++i)
      out.push_back(pool[static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1))]);
  }
  return out;
}

}  // namespace

BatchTriple pk_sample(const Dataset& ds, std::size_t persons_per_batch,
                      std::size_t images_per_person, Rng& rng) {
  if (persons_per_batch < 2 || images_per_person < 2)
    fail("pk_sample: need at least 2 persons and 2 images per person");
  const auto& ids = ds.identities();
  if (ids.size() < persons_per_batch)
    fail("pk_sample: dataset has " + std::to_string(ids.size()) +
         " identities, need " + std::to_string(persons_per_batch));

  // Partial Fisher-Yates over a copy of the identity list.
  std::vector<int> chosen = ids;
  for (std::size_t i = 0; i < persons_per_batch; ++i) {
    const auto j = static_cast<std::size_t>(
        rng.uniform_int(static_cast<std::int64_t>(i), static_cast<std::int64_t>(chosen.size()) - 1));
    std::swap(chosen[i], chosen[j]);
  }
  chosen.resize(persons_per_batch);

  BatchTriple batch;
  for (int id : chosen) {
    const auto& vis = ds.indices_of(id, Modality::kVisible);
    const auto& inf = ds.indices_of(id, Modality::kInfrared);
    if (vis.empty() || inf.empty())
      fail("pk_sample: identity " + std::to_string(id) + " is missing one modality");
    for (std::size_t idx : pick_for_identity(vis, images_per_person, rng)) {
      batch.visible.push_back(ds.samples()[idx]);
      batch.visible_indices.push_back(idx);
    }
    for (std::size_t idx : pick_for_identity(inf, images_per_person, rng)) {
      batch.infrared.push_back(ds.samples()[idx]);
      batch.infrared_indices.push_back(idx);
    }
    for (std::size_t i = 0; i < images_per_person; ++i) batch.labels.push_back(id);
  }
  return batch;
}

// ---- ingest / export ----------------------------------------------------------

Dataset ingest_directory(const std::string& dir, const std::string& manifest_name,
                         Split split) {
  const std::filesystem::path root(dir);
  std::ifstream in(root / manifest_name);
  if (!in) fail("ingest_directory: cannot open manifest '" + (root / manifest_name).string() + "'");

  std::vector<Sample> samples;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string rel, id_s, cam_s, mod_s;
    if (!std::getline(ls, rel, ',') || !std::getline(ls, id_s, ',') ||
        !std::getline(ls, cam_s, ',') || !std::getline(ls, mod_s))
      fail("ingest_directory: unparseable manifest line " + std::to_string(line_no));
    Sample s;
    try {
      s.identity = std::stoi(id_s);
      s.camera = std::stoi(cam_s);
    } catch (const std::exception&) {
      fail("ingest_directory: bad identity/camera on manifest line " + std::to_string(line_no));
    }
    s.modality = parse_modality(mod_s);
    if (s.modality == Modality::kIntermediate)
      fail("ingest_directory: modality Z not allowed on manifest line " + std::to_string(line_no));
    try {
      s.image = read_image((root / rel).string());
    } catch (const Error& e) {
      fail("ingest_directory: manifest line " + std::to_string(line_no) + ": " + e.what());
    }
    if (s.modality == Modality::kVisible && s.image.channels != 3)
      fail("ingest_directory: manifest line " + std::to_string(line_no) +
           ": visible sample is not 3-channel");
    if (s.modality == Modality::kInfrared && s.image.channels != 1)
      fail("ingest_directory: manifest line " + std::to_string(line_no) +
           ": infrared sample is not 1-channel");
    samples.push_back(std::move(s));
  }
  return Dataset(std::move(samples), split);
}

void export_directory(const Dataset& ds, const std::string& dir,
                      const std::string& manifest_name) {
  const std::filesystem::path root(dir);
  std::filesystem::create_directories(root);
  std::ostringstream manifest;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Sample& s = ds.samples()[i];
    std::ostringstream name;
    name << "img_" << i << "_id" << s.identity << "_cam" << s.camera << "_"
         << modality_name(s.modality) << (s.image.channels == 3 ? ".ppm" : ".pgm");
    write_image(s.image, (root / name.str()).string());
    manifest << name.str() << "," << s.identity << "," << s.camera << ","
             << modality_name(s.modality) << "\n";
  }
  const std::string tmp = (root / (manifest_name + ".tmp")).string();
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) fail("export_directory: cannot write manifest");
    out << manifest.str();
  }
  if (std::rename(tmp.c_str(), (root / manifest_name).string().c_str()) != 0)
    fail("export_directory: cannot move manifest into place");
}

}  // namespace lupi
