#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "lupi/checkpoint.hpp"
#include "lupi/config.hpp"
#include "lupi/trainer.hpp"

using namespace lupi;

namespace {

const std::string kDir = "/tmp/lupi_ckpt_test";

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

ModelParams small_params() {
  ModelConfig mc;
  mc.feature_dim = 6;
  mc.num_classes = 4;
  mc.stem_width = 2;
  mc.trunk_width1 = 2;
  mc.trunk_width2 = 3;
  return init_params(77, mc);
}

std::string echo_for(const ModelParams& p) {
  RunConfig rc;
  rc.train.model = p.config;
  return canonical_echo(rc);
}

}  // namespace

TEST_CASE("checkpoint round trip") {
  std::filesystem::create_directories(kDir);
  ModelParams params = small_params();
  const std::string path = kDir + "/a.ckpt";
  save_checkpoint(params, echo_for(params), path);

  LoadedCheckpoint loaded = load_checkpoint(path);
  REQUIRE(loaded.params.tensors.size() == params.tensors.size());
  SUBCASE("values round through 32-bit storage") {
    for (const auto& [name, t] : params.tensors) {
      const Tensor& lt = loaded.params.tensors.at(name);
      REQUIRE(lt.shape() == t.shape());
      for (std::size_t i = 0; i < t.size(); ++i)
        CHECK(lt.data()[i] == static_cast<double>(static_cast<float>(t.data()[i])));
    }
    CHECK(loaded.params.config.feature_dim == params.config.feature_dim);
    CHECK(loaded.params.config.num_classes == params.config.num_classes);
  }

  SUBCASE("save-load-save is byte identical") {
    const std::string again = kDir + "/b.ckpt";
    save_checkpoint(loaded.params, loaded.config_echo, again);
    CHECK(slurp(path) == slurp(again));
  }

  SUBCASE("corrupting any byte trips the CRC") {
    std::string bytes = slurp(path);
    for (std::size_t pos : {std::size_t{0}, bytes.size() / 2, bytes.size() - 5}) {
      std::string bad = bytes;
      bad[pos] = static_cast<char>(bad[pos] ^ 0x40);
      std::ofstream out(kDir + "/bad.ckpt", std::ios::binary | std::ios::trunc);
      out << bad;
      out.close();
      CHECK_THROWS_AS(load_checkpoint(kDir + "/bad.ckpt"), Error);
    }
  }

  SUBCASE("version mismatch is an explicit error, never reinterpretation") {
    std::string bytes = slurp(path);
    bytes[4] = 2;  // bump the version field
    // Recompute the trailing CRC so only the version differs.
    const std::uint32_t crc =
        crc32(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size() - 4);
    for (int i = 0; i < 4; ++i)
      bytes[bytes.size() - 4 + static_cast<std::size_t>(i)] =
          static_cast<char>((crc >> (8 * i)) & 0xff);
    std::ofstream out(kDir + "/v2.ckpt", std::ios::binary | std::ios::trunc);
    out << bytes;
    out.close();
    CHECK_THROWS_WITH_AS(load_checkpoint(kDir + "/v2.ckpt"), doctest::Contains("version"),
                         Error);
  }

  SUBCASE("missing and non-checkpoint files rejected") {
    CHECK_THROWS_AS(load_checkpoint(kDir + "/nope.ckpt"), Error);
    std::ofstream out(kDir + "/junk.ckpt", std::ios::binary | std::ios::trunc);
    out << "definitely not a checkpoint, far too long to be truncated";
    out.close();
    CHECK_THROWS_AS(load_checkpoint(kDir + "/junk.ckpt"), Error);
  }
}

TEST_CASE("evaluation drifts at most 1e-4 after a reload") {
  SynthConfig synth;
  synth.num_identities = 5;
  synth.images_per_identity_per_modality = 3;
  synth.height = 12;
  synth.width = 6;
  SynthDataset ds = generate_synthetic(synth);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.iterations_per_epoch = 4;
  cfg.batch_persons = 2;
  cfg.images_per_person = 2;
  cfg.model.feature_dim = 8;
  cfg.model.stem_width = 2;
  cfg.model.trunk_width1 = 3;
  cfg.model.trunk_width2 = 4;
  TrainResult r = train(ds.train, cfg);

  std::filesystem::create_directories(kDir);
  const std::string path = kDir + "/drift.ckpt";
  RunConfig rc;
  rc.train = cfg;
  rc.train.model = r.params.config;
  save_checkpoint(r.params, canonical_echo(rc), path);
  LoadedCheckpoint loaded = load_checkpoint(path);

  EvalProtocol proto;
  proto.num_trials = 3;
  EvalReport before = evaluate_with_model(r.params, ds.test, proto);
  EvalReport after = evaluate_with_model(loaded.params, ds.test, proto);
  CHECK(std::abs(before.map - after.map) <= 1e-4);
  CHECK(std::abs(before.rank_k(1) - after.rank_k(1)) <= 1e-4);
}

TEST_CASE("run config parsing") {
  SUBCASE("round trip through the canonical echo") {
    RunConfig cfg;
    cfg.synth.num_identities = 7;
    cfg.train.lr = 0.025;
    cfg.train.intermediate_mode = IntermediateMode::kGrayscale;
    cfg.train.loss.lambda = 2.5;
    cfg.protocol.shot_mode = ShotMode::kMulti;
    cfg.protocol.rng_seed = 42;
    const std::string echo = canonical_echo(cfg);
    RunConfig back = parse_run_config(echo);
    CHECK(canonical_echo(back) == echo);
    CHECK(back.synth.num_identities == 7);
    CHECK(back.train.lr == 0.025);
    CHECK(back.train.intermediate_mode == IntermediateMode::kGrayscale);
    CHECK(back.protocol.shot_mode == ShotMode::kMulti);
  }

  SUBCASE("unknown keys rejected") {
    CHECK_THROWS_WITH_AS(parse_run_config("bogus.key = 1\n"), doctest::Contains("bogus.key"),
                         Error);
  }

  SUBCASE("malformed lines and values rejected") {
    CHECK_THROWS_AS(parse_run_config("train.lr\n"), Error);
    CHECK_THROWS_AS(parse_run_config("train.lr = fast\n"), Error);
    CHECK_THROWS_AS(parse_run_config("train.intermediate_mode = sepia\n"), Error);
    CHECK_THROWS_AS(parse_run_config("eval.shot_mode = triple\n"), Error);
  }

  SUBCASE("comments and blank lines are fine") {
    RunConfig cfg = parse_run_config("# comment\n\ntrain.epochs = 3\n");
    CHECK(cfg.train.epochs == 3);
  }
}
