#include "lupi/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <sstream>

namespace lupi {

std::string intermediate_mode_name(IntermediateMode m) {
  switch (m) {
    case IntermediateMode::kNone: return "none";
    case IntermediateMode::kGrayscale: return "grayscale";
    case IntermediateMode::kRandMix: return "randmix";
    case IntermediateMode::kRandMixAug: return "randmix_aug";
  }
  return "?";
}

IntermediateMode parse_intermediate_mode(const std::string& s) {
  if (s == "none") return IntermediateMode::kNone;
  if (s == "grayscale") return IntermediateMode::kGrayscale;
  if (s == "randmix") return IntermediateMode::kRandMix;
  if (s == "randmix_aug") return IntermediateMode::kRandMixAug;
  fail("unknown intermediate mode '" + s + "'");
}

namespace {

double warmup_factor(std::size_t epoch, std::size_t warmup_epochs) {
  if (warmup_epochs == 0 || epoch >= warmup_epochs) return 1.0;
  return 0.1 + 0.9 * static_cast<double>(epoch) / static_cast<double>(warmup_epochs);
}

struct AssembledLoss {
  Tensor value;
  LossBreakdown breakdown;
};

// The base recipe always carries the identity loss and a conventional
// cross-modal triplet between the two main streams. Enabling L_tri replaces
// that triplet with the intermediate dual form; enabling L_c adds the
// weighted color-free term. Terms whose toggle is off (or whose weight is
// zero) are not built at all, so a disabled term can never perturb the
// optimization target.
AssembledLoss assemble_loss(const EmbeddingBatch& fv, const EmbeddingBatch& ft,
                            const EmbeddingBatch* fz, const LossConfig& cfg) {
  AssembledLoss out;

  TripletResult tri = (cfg.triplet_enabled && fz != nullptr)
                          ? dual_triplet(fv, ft, *fz, cfg.margin)
                          : cross_modal_triplet(fv, ft, cfg.margin);
  out.breakdown.triplet = tri.value.item();
  out.breakdown.skipped_anchors = tri.skipped_anchors;
  Tensor acc = tri.value;

  if (cfg.color_free_enabled && fz != nullptr && cfg.lambda > 0.0) {
    Tensor cf = color_free(fv, *fz, cfg.alpha_c, cfg.cf_threshold);
    out.breakdown.color_free = cf.item();
    acc = add(acc, mul(cf, cfg.lambda));
  }

  const double bv = static_cast<double>(fv.labels.size());
  const double bt = static_cast<double>(ft.labels.size());
  Tensor id_sum = add(mul(identity_loss(fv.logits, fv.labels), bv),
                      mul(identity_loss(ft.logits, ft.labels), bt));
  double rows = bv + bt;
  if (fz != nullptr) {
    const double bz = static_cast<double>(fz->labels.size());
    id_sum = add(id_sum, mul(identity_loss(fz->logits, fz->labels), bz));
    rows += bz;
  }
  Tensor id = mul(id_sum, 1.0 / rows);
  out.breakdown.identity = id.item();
  out.value = add(acc, id);
  out.breakdown.total = out.value.item();
  return out;
}

std::map<int, int> class_index(const Dataset& ds) {
  std::map<int, int> index;
  for (int id : ds.identities()) index.emplace(id, static_cast<int>(index.size()));
  return index;
}

}  // namespace

TrainResult train(const Dataset& train_ds, const TrainConfig& cfg,
                  const Dataset* held_out) {
  if (train_ds.empty()) fail("train: empty training set");
  const auto t0 = std::chrono::steady_clock::now();

  const std::map<int, int> classes = class_index(train_ds);
  ModelConfig model_cfg = cfg.model;
  model_cfg.num_classes = classes.size();
  ModelParams params = init_params(cfg.seed, model_cfg);
  SgdState opt_state;

  // Pad-and-crop only; no flips.
  const Image& probe = train_ds.samples()[0].image;
  const AugmentPolicy aug_policy{probe.height, probe.width, 0.15,
                                 AugmentPolicy::PadMode::kMean, 0.0};

  TrainResult result;
  // The intermediate stream exists only when some loss consumes it.
  const bool has_z = cfg.intermediate_mode != IntermediateMode::kNone &&
                     (cfg.loss.triplet_enabled ||
                      (cfg.loss.color_free_enabled && cfg.loss.lambda > 0.0));
  const bool aug = cfg.intermediate_mode == IntermediateMode::kRandMixAug;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.lr * warmup_factor(epoch, cfg.warmup_epochs);
    for (std::size_t iter = 0; iter < cfg.iterations_per_epoch; ++iter) {
      Rng batch_rng = make_stream(cfg.seed, stream::kBatch, epoch, iter);
      BatchTriple batch = pk_sample(train_ds, cfg.batch_persons, cfg.images_per_person,
                                    batch_rng);
      std::vector<int> labels;
      labels.reserve(batch.labels.size());
      for (int id : batch.labels) labels.push_back(classes.at(id));

      std::vector<Image> vis, inf, mid;
      vis.reserve(batch.visible.size());
      inf.reserve(batch.infrared.size());
      for (const Sample& s : batch.visible) vis.push_back(s.image);
      for (const Sample& s : batch.infrared) inf.push_back(s.image);

      if (has_z) {
        mid.reserve(vis.size());
        for (std::size_t i = 0; i < vis.size(); ++i) {
          if (cfg.intermediate_mode == IntermediateMode::kGrayscale) {
            mid.push_back(to_grayscale(vis[i]));
          } else {
            // One weight draw per source image per epoch.
            Rng mix_rng = make_stream(cfg.seed, stream::kMix, epoch, batch.visible_indices[i]);
            mid.push_back(random_channel_mix(vis[i], mix_rng).first);
          }
          ++result.log.mix_invocations;
        }
      }
      if (aug) {
        Rng aug_rng = make_stream(cfg.seed, stream::kAugment, epoch, iter);
        for (auto& img : vis) img = augment(img, aug_policy, aug_rng);
        for (auto& img : inf) img = augment(img, aug_policy, aug_rng);
        for (auto& img : mid) img = augment(img, aug_policy, aug_rng);
      }

      GradMap grads;
      AssembledLoss loss;
      try {
        Tape tape;
        watch_all(tape, params);
        EmbeddingBatch fv = embed(params, vis, Modality::kVisible, labels);
        EmbeddingBatch ft = embed(params, inf, Modality::kInfrared, labels);
        EmbeddingBatch fz;
        if (has_z) fz = embed(params, mid, Modality::kIntermediate, labels);
        loss = assemble_loss(fv, ft, has_z ? &fz : nullptr, cfg.loss);
        if (!std::isfinite(loss.breakdown.total))
          fail("non-finite loss");
        grads = tape.backward(loss.value);
      } catch (const Error& e) {
        fail("train: aborted at epoch " + std::to_string(epoch) + " iteration " +
             std::to_string(iter) + ": " + e.what());
      }
      sgd_step(params.tensors, grads,
               {.lr = lr, .momentum = cfg.momentum, .weight_decay = cfg.weight_decay},
               opt_state);
      result.log.iterations.push_back(IterationLog{epoch, iter, lr, loss.breakdown});
    }

    if (held_out != nullptr && !held_out->empty()) {
      EvalProtocol snap;
      snap.num_trials = 2;
      snap.rng_seed = make_stream(cfg.seed, stream::kTrainEval, epoch).next_u64();
      EvalReport report = evaluate_with_model(params, *held_out, snap);
      result.log.snapshots.push_back(EpochSnapshot{epoch, report.rank_k(1), report.map});
    }
  }

  result.params = std::move(params);
  result.log.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

std::vector<EmbeddingRecord> embed_dataset(const ModelParams& params, const Dataset& ds,
                                           std::size_t batch_size) {
  if (batch_size == 0) fail("embed_dataset: batch_size must be positive");
  std::vector<EmbeddingRecord> records;
  records.reserve(ds.size());
  // Group by modality so each forward batch has uniform channel count.
  for (Modality m : {Modality::kVisible, Modality::kInfrared}) {
    std::vector<std::size_t> indices;
    for (std::size_t i = 0; i < ds.size(); ++i)
      if (ds.samples()[i].modality == m) indices.push_back(i);
    for (std::size_t start = 0; start < indices.size(); start += batch_size) {
      const std::size_t stop = std::min(start + batch_size, indices.size());
      std::vector<Image> images;
      std::vector<int> labels;
      for (std::size_t k = start; k < stop; ++k) {
        images.push_back(ds.samples()[indices[k]].image);
        labels.push_back(0);  // labels are irrelevant for embedding
      }
      EmbeddingBatch out = embed(params, images, m, labels);
      const std::size_t d = out.features.shape()[1];
      for (std::size_t k = start; k < stop; ++k) {
        const Sample& s = ds.samples()[indices[k]];
        EmbeddingRecord rec;
        rec.feature.assign(out.features.data().begin() + static_cast<long>((k - start) * d),
                           out.features.data().begin() + static_cast<long>((k - start + 1) * d));
        rec.identity = s.identity;
        rec.camera = s.camera;
        rec.modality = s.modality;
        records.push_back(std::move(rec));
      }
    }
  }
  return records;
}

EvalReport evaluate_with_model(const ModelParams& params, const Dataset& test_ds,
                               const EvalProtocol& protocol) {
  const std::vector<EmbeddingRecord> records = embed_dataset(params, test_ds);
  std::vector<EmbeddingRecord> queries, gallery;
  for (const auto& r : records) {
    if (r.modality == protocol.query_modality) queries.push_back(r);
    if (r.modality == protocol.gallery_modality) gallery.push_back(r);
  }
  return evaluate(queries, gallery, protocol);
}

std::string TrainLog::to_jsonl() const {
  std::ostringstream os;
  os.precision(17);
  for (const auto& it : iterations) {
    os << "{\"epoch\": " << it.epoch << ", \"iteration\": " << it.iteration
       << ", \"lr\": " << it.lr << ", \"total\": " << it.loss.total
       << ", \"triplet\": " << it.loss.triplet << ", \"color_free\": " << it.loss.color_free
       << ", \"identity\": " << it.loss.identity
       << ", \"skipped_anchors\": " << it.loss.skipped_anchors << "}\n";
  }
  for (const auto& s : snapshots) {
    os << "{\"epoch\": " << s.epoch << ", \"snapshot_rank1\": " << s.rank1
       << ", \"snapshot_map\": " << s.map << "}\n";
  }
  os << "{\"wall_seconds\": " << wall_seconds << ", \"mix_invocations\": " << mix_invocations
     << "}\n";
  return os.str();
}

std::string AblationTable::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "mode,triplet,color_free,r1,r5,r10,map\n";
  for (const auto& c : cells) {
    os << intermediate_mode_name(c.mode) << "," << (c.triplet_on ? 1 : 0) << ","
       << (c.color_free_on ? 1 : 0) << "," << c.report.rank_k(1) << ","
       << c.report.rank_k(5) << "," << c.report.rank_k(10) << "," << c.report.map << "\n";
  }
  return os.str();
}

AblationTable run_ablation(const Dataset& train_ds, const Dataset& test_ds,
                           const TrainConfig& base_cfg, const EvalProtocol& protocol) {
  AblationTable table;
  for (IntermediateMode mode : {IntermediateMode::kNone, IntermediateMode::kGrayscale,
                                IntermediateMode::kRandMix, IntermediateMode::kRandMixAug}) {
    for (bool tri : {false, true}) {
      for (bool cf : {false, true}) {
        TrainConfig cfg = base_cfg;
        cfg.intermediate_mode = mode;
        cfg.loss.triplet_enabled = tri;
        cfg.loss.color_free_enabled = cf;
        TrainResult run = train(train_ds, cfg);
        AblationCell cell;
        cell.mode = mode;
        cell.triplet_on = tri;
        cell.color_free_on = cf;
        cell.report = evaluate_with_model(run.params, test_ds, protocol);
        table.cells.push_back(std::move(cell));
        log_info("ablation " + intermediate_mode_name(mode) + " tri=" +
                 std::to_string(tri) + " cf=" + std::to_string(cf) + " r1=" +
                 std::to_string(table.cells.back().report.rank_k(1)));
      }
    }
  }
  return table;
}

}  // namespace lupi
