#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lupi/trainer.hpp"

using namespace lupi;

namespace {

SynthConfig tiny_synth() {
  SynthConfig cfg;
  cfg.num_identities = 5;
  cfg.images_per_identity_per_modality = 3;
  cfg.height = 12;
  cfg.width = 6;
  cfg.rng_seed = 9;
  return cfg;
}

TrainConfig tiny_train() {
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.iterations_per_epoch = 3;
  cfg.batch_persons = 2;
  cfg.images_per_person = 2;
  cfg.model.feature_dim = 8;
  cfg.model.stem_width = 2;
  cfg.model.trunk_width1 = 3;
  cfg.model.trunk_width2 = 4;
  cfg.seed = 5;
  return cfg;
}

bool params_equal(const ParamMap& a, const ParamMap& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [name, t] : a) {
    auto it = b.find(name);
    if (it == b.end() || it->second.shape() != t.shape()) return false;
    for (std::size_t i = 0; i < t.size(); ++i)
      if (t.data()[i] != it->second.data()[i]) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("zero epochs returns the initialized parameters") {
  Dataset train_ds = generate_synthetic(tiny_synth()).train;
  TrainConfig cfg = tiny_train();
  cfg.epochs = 0;
  TrainResult r = train(train_ds, cfg);
  ModelConfig mc = cfg.model;
  mc.num_classes = train_ds.identities().size();
  ModelParams fresh = init_params(cfg.seed, mc);
  CHECK(params_equal(r.params.tensors, fresh.tensors));
  CHECK(r.log.iterations.empty());
}

TEST_CASE("same seed trains to bitwise-identical parameters") {
  SynthDataset ds = generate_synthetic(tiny_synth());
  TrainConfig cfg = tiny_train();
  cfg.intermediate_mode = IntermediateMode::kRandMixAug;
  TrainResult a = train(ds.train, cfg, &ds.test);
  TrainResult b = train(ds.train, cfg, &ds.test);
  CHECK(params_equal(a.params.tensors, b.params.tensors));
  REQUIRE(a.log.snapshots.size() == b.log.snapshots.size());
  for (std::size_t i = 0; i < a.log.snapshots.size(); ++i) {
    CHECK(a.log.snapshots[i].rank1 == b.log.snapshots[i].rank1);
    CHECK(a.log.snapshots[i].map == b.log.snapshots[i].map);
  }

  TrainConfig other = cfg;
  other.seed = cfg.seed + 1;
  TrainResult c = train(ds.train, other);
  CHECK_FALSE(params_equal(a.params.tensors, c.params.tensors));
}

TEST_CASE("loss breakdown adds up at every logged iteration") {
  Dataset train_ds = generate_synthetic(tiny_synth()).train;
  for (IntermediateMode mode : {IntermediateMode::kNone, IntermediateMode::kRandMix}) {
    TrainConfig cfg = tiny_train();
    cfg.intermediate_mode = mode;
    TrainResult r = train(train_ds, cfg);
    REQUIRE(r.log.iterations.size() == cfg.epochs * cfg.iterations_per_epoch);
    for (const auto& it : r.log.iterations) {
      const double recomposed =
          it.loss.triplet + cfg.loss.lambda * it.loss.color_free + it.loss.identity;
      CHECK(std::abs(it.loss.total - recomposed) <= 1e-10);
    }
  }
}

TEST_CASE("mode none never derives intermediate images") {
  Dataset train_ds = generate_synthetic(tiny_synth()).train;
  TrainConfig cfg = tiny_train();
  cfg.intermediate_mode = IntermediateMode::kNone;
  CHECK(train(train_ds, cfg).log.mix_invocations == 0);

  cfg.intermediate_mode = IntermediateMode::kGrayscale;
  CHECK(train(train_ds, cfg).log.mix_invocations > 0);

  cfg.intermediate_mode = IntermediateMode::kRandMix;
  CHECK(train(train_ds, cfg).log.mix_invocations > 0);

  // Without any loss consuming it, the intermediate stream stays unused.
  cfg.loss.triplet_enabled = false;
  cfg.loss.color_free_enabled = false;
  CHECK(train(train_ds, cfg).log.mix_invocations == 0);
}

TEST_CASE("warm-up ramps the learning rate from 10 percent") {
  Dataset train_ds = generate_synthetic(tiny_synth()).train;
  TrainConfig cfg = tiny_train();
  cfg.epochs = 3;
  cfg.warmup_epochs = 2;
  cfg.lr = 0.5;
  TrainResult r = train(train_ds, cfg);
  CHECK(r.log.iterations.front().lr == doctest::Approx(0.05));
  CHECK(r.log.iterations.back().lr == 0.5);
}

TEST_CASE("training loss decreases over the first epoch") {
  SynthConfig synth = tiny_synth();
  synth.num_identities = 8;
  synth.images_per_identity_per_modality = 4;
  Dataset train_ds = generate_synthetic(synth).train;
  TrainConfig cfg = tiny_train();
  cfg.epochs = 1;
  cfg.iterations_per_epoch = 25;
  cfg.lr = 0.05;
  cfg.warmup_epochs = 0;
  cfg.intermediate_mode = IntermediateMode::kRandMix;
  TrainResult r = train(train_ds, cfg);
  const double first = r.log.iterations.front().loss.total;
  double tail = 0.0;
  for (std::size_t i = r.log.iterations.size() - 5; i < r.log.iterations.size(); ++i)
    tail += r.log.iterations[i].loss.total;
  tail /= 5.0;
  CHECK(tail < first);
}

TEST_CASE("a toggle with zero weight never changes the optimization target") {
  Dataset train_ds = generate_synthetic(tiny_synth()).train;
  TrainConfig with_zero = tiny_train();
  with_zero.intermediate_mode = IntermediateMode::kRandMix;
  with_zero.loss.color_free_enabled = true;
  with_zero.loss.lambda = 0.0;
  TrainConfig without = with_zero;
  without.loss.color_free_enabled = false;
  without.loss.lambda = 10.0;  // irrelevant once the term is off
  CHECK(params_equal(train(train_ds, with_zero).params.tensors,
                     train(train_ds, without).params.tensors));
}

TEST_CASE("divergence aborts with the iteration index") {
  Dataset train_ds = generate_synthetic(tiny_synth()).train;
  TrainConfig cfg = tiny_train();
  cfg.lr = 1.0;
  cfg.warmup_epochs = 0;
  cfg.weight_decay = 1e300;  // overflows the parameters within a few steps
  CHECK_THROWS_WITH_AS(train(train_ds, cfg), doctest::Contains("iteration"), Error);
}

TEST_CASE("embed_dataset and evaluate_with_model") {
  SynthDataset ds = generate_synthetic(tiny_synth());
  TrainConfig cfg = tiny_train();
  ModelConfig mc = cfg.model;
  mc.num_classes = ds.train.identities().size();
  ModelParams params = init_params(3, mc);

  auto records = embed_dataset(params, ds.test);
  REQUIRE(records.size() == ds.test.size());
  for (const auto& r : records) {
    double sq = 0.0;
    for (double v : r.feature) sq += v * v;
    CHECK(std::sqrt(sq) == doctest::Approx(1.0).epsilon(1e-8));
  }

  EvalProtocol proto;
  proto.num_trials = 2;
  EvalReport rep = evaluate_with_model(params, ds.test, proto);
  CHECK(rep.num_queries ==
        tiny_synth().num_identities * tiny_synth().images_per_identity_per_modality);
  CHECK(rep.map >= 0.0);
  CHECK(rep.map <= 1.0);
}

TEST_CASE("ablation grid covers 16 cells and serializes") {
  SynthDataset ds = generate_synthetic(tiny_synth());
  TrainConfig cfg = tiny_train();
  cfg.epochs = 1;
  cfg.iterations_per_epoch = 2;
  EvalProtocol proto;
  proto.num_trials = 1;
  AblationTable table = run_ablation(ds.train, ds.test, cfg, proto);
  CHECK(table.cells.size() == 16);
  const std::string csv = table.to_csv();
  CHECK(csv.rfind("mode,triplet,color_free,r1,r5,r10,map\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 17);
  // The full method's cell is present.
  bool found = false;
  for (const auto& c : table.cells)
    found = found || (c.mode == IntermediateMode::kRandMix && c.triplet_on && c.color_free_on);
  CHECK(found);
}
