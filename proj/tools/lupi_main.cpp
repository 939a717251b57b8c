#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "lupi/checkpoint.hpp"
#include "lupi/config.hpp"
#include "lupi/data.hpp"
#include "lupi/eval.hpp"
#include "lupi/trainer.hpp"

namespace {

using namespace lupi;

RunConfig resolve_config(const std::string& path) {
  RunConfig cfg = path.empty() ? RunConfig{} : load_run_config(path);
  return cfg;
}

void echo_config(const RunConfig& cfg) {
  std::istringstream echo(canonical_echo(cfg));
  std::string line;
  while (std::getline(echo, line)) log_info("config: " + line);
}

void write_text_file(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc | std::ios::binary);
    if (!out) fail("cannot open '" + tmp + "'");
    out << content;
    if (!out) fail("failed writing '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    fail("cannot move '" + tmp + "' into place");
}

Dataset load_split(const std::string& data_dir, Split split, bool required) {
  const char* sub = split == Split::kTrain ? "train" : "test";
  const std::filesystem::path dir = std::filesystem::path(data_dir) / sub;
  if (!std::filesystem::exists(dir / "manifest.csv")) {
    if (required) fail("dataset: missing manifest '" + (dir / "manifest.csv").string() + "'");
    return Dataset{};
  }
  return ingest_directory(dir.string(), "manifest.csv", split);
}

int cmd_generate(const std::string& config_path, const std::string& out_dir) {
  RunConfig cfg = resolve_config(config_path);
  echo_config(cfg);
  SynthDataset ds = generate_synthetic(cfg.synth);
  export_directory(ds.train, (std::filesystem::path(out_dir) / "train").string());
  export_directory(ds.test, (std::filesystem::path(out_dir) / "test").string());
  log_info("generate: wrote " + std::to_string(ds.train.size()) + " train and " +
           std::to_string(ds.test.size()) + " test samples under " + out_dir);
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_path, const std::string& log_path) {
  RunConfig cfg = resolve_config(config_path);
  echo_config(cfg);
  Dataset train_ds = load_split(data_dir, Split::kTrain, true);
  Dataset test_ds = load_split(data_dir, Split::kTest, false);

  TrainResult result = train(train_ds, cfg.train, test_ds.empty() ? nullptr : &test_ds);
  cfg.train.model = result.params.config;  // num_classes resolved from the data
  save_checkpoint(result.params, canonical_echo(cfg), out_path);
  if (!log_path.empty()) write_text_file(log_path, result.log.to_jsonl());
  log_info("train: " + std::to_string(result.log.iterations.size()) + " iterations in " +
           std::to_string(result.log.wall_seconds) + "s; checkpoint at " + out_path);
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir,
             const std::string& query_mod, const std::string& gallery_mod,
             const std::string& shot, std::size_t trials, bool exclude_same_camera,
             std::uint64_t seed) {
  LoadedCheckpoint ckpt = load_checkpoint(ckpt_path);
  RunConfig cfg = parse_run_config(ckpt.config_echo);
  cfg.protocol.query_modality = parse_modality(query_mod);
  cfg.protocol.gallery_modality = parse_modality(gallery_mod);
  if (shot == "single") cfg.protocol.shot_mode = ShotMode::kSingle;
  else if (shot == "multi") cfg.protocol.shot_mode = ShotMode::kMulti;
  else fail("eval: bad --shot '" + shot + "' (single|multi)");
  cfg.protocol.num_trials = trials;
  cfg.protocol.exclude_same_camera = exclude_same_camera;
  cfg.protocol.rng_seed = seed;
  echo_config(cfg);

  Dataset test_ds = load_split(data_dir, Split::kTest, true);
  EvalReport report = evaluate_with_model(ckpt.params, test_ds, cfg.protocol);
  std::cout << eval_report_json(report);
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& data_dir,
               const std::string& out_path) {
  RunConfig cfg = resolve_config(config_path);
  echo_config(cfg);
  Dataset train_ds = load_split(data_dir, Split::kTrain, true);
  Dataset test_ds = load_split(data_dir, Split::kTest, true);
  AblationTable table = run_ablation(train_ds, test_ds, cfg.train, cfg.protocol);
  write_text_file(out_path, table.to_csv());
  log_info("ablate: wrote " + std::to_string(table.cells.size()) + " cells to " + out_path);
  return 0;
}

std::vector<std::vector<double>> normalized_rows(std::vector<std::vector<double>> rows) {
  for (auto& r : rows) {
    double sq = 0.0;
    for (double v : r) sq += v * v;
    const double norm = std::sqrt(sq);
    if (norm > 0.0)
      for (double& v : r) v /= norm;
  }
  return rows;
}

// Raw pixel representation: every image becomes a 3-channel plane stack
// (1-channel images replicated), flattened and L2-normalized so the default
// bandwidths match the unit-feature scale.
std::vector<double> flatten3(const Image& img) {
  std::vector<double> flat;
  flat.reserve(3 * img.height * img.width);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < img.height; ++y)
      for (std::size_t x = 0; x < img.width; ++x)
        flat.push_back(img.at(y, x, img.channels == 3 ? c : 0));
  return flat;
}

int cmd_mmd(const std::string& data_dir, const std::string& ckpt_path,
            const std::string& between, const std::string& bandwidths_csv,
            std::uint64_t seed) {
  const auto comma = between.find(',');
  if (comma == std::string::npos) fail("mmd: --between expects a pair like V,I");
  const Modality ma = parse_modality(between.substr(0, comma));
  const Modality mb = parse_modality(between.substr(comma + 1));
  if (ma == mb) fail("mmd: --between needs two distinct modalities");

  std::vector<double> bandwidths;
  std::istringstream bws(bandwidths_csv);
  std::string tok;
  while (std::getline(bws, tok, ',')) bandwidths.push_back(std::stod(tok));

  Dataset test_ds = load_split(data_dir, Split::kTest, true);

  // Intermediate-domain members are derived from the visible samples.
  auto images_of = [&](Modality m) {
    std::vector<Image> images;
    Rng mix_rng = make_stream(seed, stream::kMix, 0);
    for (const Sample& s : test_ds.samples()) {
      if (m == Modality::kIntermediate) {
        if (s.modality == Modality::kVisible)
          images.push_back(random_channel_mix(s.image, mix_rng).first);
      } else if (s.modality == m) {
        images.push_back(s.image);
      }
    }
    if (images.size() < 2) fail("mmd: fewer than 2 samples of modality " + modality_name(m));
    return images;
  };
  std::vector<Image> imgs_a = images_of(ma);
  std::vector<Image> imgs_b = images_of(mb);

  std::vector<std::vector<double>> xa, xb;
  if (ckpt_path.empty()) {
    for (const Image& img : imgs_a) xa.push_back(flatten3(img));
    for (const Image& img : imgs_b) xb.push_back(flatten3(img));
    xa = normalized_rows(std::move(xa));
    xb = normalized_rows(std::move(xb));
  } else {
    LoadedCheckpoint ckpt = load_checkpoint(ckpt_path);
    auto embed_images = [&](const std::vector<Image>& images, Modality m) {
      std::vector<std::vector<double>> rows;
      std::vector<int> labels(images.size(), 0);
      EmbeddingBatch out = embed(ckpt.params, images, m, labels);
      const std::size_t d = out.features.shape()[1];
      for (std::size_t i = 0; i < images.size(); ++i)
        rows.emplace_back(out.features.data().begin() + static_cast<long>(i * d),
                          out.features.data().begin() + static_cast<long>((i + 1) * d));
      return rows;
    };
    xa = embed_images(imgs_a, ma);
    xb = embed_images(imgs_b, mb);
  }

  const double value = mmd(xa, xb, bandwidths);
  std::printf("{\"between\": \"%s,%s\", \"mmd\": %.17g, \"n_a\": %zu, \"n_b\": %zu}\n",
              modality_name(ma).c_str(), modality_name(mb).c_str(), value, xa.size(),
              xb.size());
  return 0;
}

int cmd_hist(const std::string& ckpt_path, const std::string& data_dir,
             const std::string& out_path) {
  LoadedCheckpoint ckpt = load_checkpoint(ckpt_path);
  Dataset test_ds = load_split(data_dir, Split::kTest, true);
  const std::vector<EmbeddingRecord> records = embed_dataset(ckpt.params, test_ds);
  DistanceHistograms h = distance_histograms(records);
  write_text_file(out_path, histograms_csv(h));
  log_info("hist: positives " + std::to_string(h.positive_count) + " mean " +
           std::to_string(h.positive_mean) + "; negatives " +
           std::to_string(h.negative_count) + " mean " + std::to_string(h.negative_mean));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LUPI visible-infrared re-identification workbench"};
  app.require_subcommand(1);

  std::string config_path, data_dir, out_path, log_path, ckpt_path;
  std::string query_mod = "I", gallery_mod = "V", shot = "single";
  std::string between = "V,I", bandwidths = "0.25,0.5,1.0";
  std::size_t trials = 10;
  std::uint64_t seed = 0;
  bool exclude_same_camera = false;

  auto* generate = app.add_subcommand("generate", "Generate a synthetic dataset");
  generate->add_option("--config", config_path, "run config file");
  generate->add_option("--out-dir", out_path, "output dataset directory")->required();

  auto* train = app.add_subcommand("train", "Train the three-stream model");
  train->add_option("--config", config_path, "run config file");
  train->add_option("--data", data_dir, "dataset directory")->required();
  train->add_option("--out", out_path, "checkpoint output path")->required();
  train->add_option("--log", log_path, "JSON-lines training log");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate retrieval from a checkpoint");
  eval_cmd->add_option("--checkpoint", ckpt_path, "checkpoint path")->required();
  eval_cmd->add_option("--data", data_dir, "dataset directory")->required();
  eval_cmd->add_option("--query-mod", query_mod, "query modality (V|I)");
  eval_cmd->add_option("--gallery-mod", gallery_mod, "gallery modality (V|I)");
  eval_cmd->add_option("--shot", shot, "single|multi");
  eval_cmd->add_option("--trials", trials, "number of gallery-sampling trials");
  eval_cmd->add_flag("--exclude-same-camera", exclude_same_camera,
                     "drop same-identity same-camera gallery entries");
  eval_cmd->add_option("--seed", seed, "trial sampling seed");

  auto* ablate = app.add_subcommand("ablate", "Train the mode x loss-toggle grid");
  ablate->add_option("--config", config_path, "run config file");
  ablate->add_option("--data", data_dir, "dataset directory")->required();
  ablate->add_option("--out", out_path, "ablation CSV output path")->required();

  auto* mmd_cmd = app.add_subcommand("mmd", "Domain-shift estimate between modalities");
  mmd_cmd->add_option("--data", data_dir, "dataset directory")->required();
  mmd_cmd->add_option("--checkpoint", ckpt_path, "optional checkpoint (else raw pixels)");
  mmd_cmd->add_option("--between", between, "modality pair: V,I | V,Z | I,Z");
  mmd_cmd->add_option("--bandwidths", bandwidths, "comma-separated Gaussian bandwidths");
  mmd_cmd->add_option("--seed", seed, "seed for intermediate-domain mixing");

  auto* hist = app.add_subcommand("hist", "Cross-modal distance histograms");
  hist->add_option("--checkpoint", ckpt_path, "checkpoint path")->required();
  hist->add_option("--data", data_dir, "dataset directory")->required();
  hist->add_option("--out", out_path, "histogram CSV output path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (generate->parsed()) return cmd_generate(config_path, out_path);
    if (train->parsed()) return cmd_train(config_path, data_dir, out_path, log_path);
    if (eval_cmd->parsed())
      return cmd_eval(ckpt_path, data_dir, query_mod, gallery_mod, shot, trials,
                      exclude_same_camera, seed);
    if (ablate->parsed()) return cmd_ablate(config_path, data_dir, out_path);
    if (mmd_cmd->parsed()) return cmd_mmd(data_dir, ckpt_path, between, bandwidths, seed);
    if (hist->parsed()) return cmd_hist(ckpt_path, data_dir, out_path);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
