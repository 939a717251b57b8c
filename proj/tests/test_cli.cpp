// End-to-end checks of the lupi binary; the path comes in as argv[1].
#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

namespace {

std::string g_binary;
const std::string kDir = "/tmp/lupi_cli_test";

struct RunResult {
  int status = -1;
  std::string out;
};

RunResult run(const std::string& args) {
  const std::string out_file = kDir + "/stdout.txt";
  const std::string cmd = "LUPI_LOG_LEVEL=error " + g_binary + " " + args + " > " +
                          out_file + " 2> " + kDir + "/stderr.txt";
  const int status = std::system(cmd.c_str());
  std::ifstream in(out_file, std::ios::binary);
  RunResult r;
  r.status = WEXITSTATUS(status);
  r.out.assign((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return r;
}

void write_config(const std::string& path) {
  std::ofstream out(path);
  out << "synth.num_identities = 5\n"
         "synth.images_per_identity = 3\n"
         "synth.height = 12\n"
         "synth.width = 6\n"
         "synth.seed = 11\n"
         "train.epochs = 2\n"
         "train.iterations_per_epoch = 3\n"
         "train.batch_persons = 2\n"
         "train.images_per_person = 2\n"
         "train.seed = 4\n"
         "model.feature_dim = 8\n"
         "model.stem_width = 2\n"
         "model.trunk_width1 = 3\n"
         "model.trunk_width2 = 4\n"
         "eval.num_trials = 2\n";
}

}  // namespace

TEST_CASE("generate, train, eval pipeline") {
  std::filesystem::remove_all(kDir);
  std::filesystem::create_directories(kDir);
  write_config(kDir + "/run.cfg");

  REQUIRE(run("generate --config " + kDir + "/run.cfg --out-dir " + kDir + "/data").status == 0);
  CHECK(std::filesystem::exists(kDir + "/data/train/manifest.csv"));
  CHECK(std::filesystem::exists(kDir + "/data/test/manifest.csv"));

  REQUIRE(run("train --config " + kDir + "/run.cfg --data " + kDir + "/data --out " +
              kDir + "/model.ckpt --log " + kDir + "/train.jsonl")
              .status == 0);
  CHECK(std::filesystem::exists(kDir + "/model.ckpt"));
  CHECK(std::filesystem::exists(kDir + "/train.jsonl"));

  SUBCASE("eval emits byte-identical JSON across runs") {
    RunResult a = run("eval --checkpoint " + kDir + "/model.ckpt --data " + kDir +
                      "/data --trials 3 --seed 7");
    RunResult b = run("eval --checkpoint " + kDir + "/model.ckpt --data " + kDir +
                      "/data --trials 3 --seed 7");
    REQUIRE(a.status == 0);
    CHECK(a.out == b.out);
    CHECK(a.out.find("\"map\"") != std::string::npos);
    CHECK(a.out.find("\"cmc\"") != std::string::npos);
  }

  SUBCASE("a corrupted checkpoint is refused") {
    std::string bytes;
    {
      std::ifstream in(kDir + "/model.ckpt", std::ios::binary);
      bytes.assign((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    }
    bytes[bytes.size() / 3] = static_cast<char>(bytes[bytes.size() / 3] ^ 0x01);
    std::ofstream out(kDir + "/broken.ckpt", std::ios::binary | std::ios::trunc);
    out << bytes;
    out.close();
    CHECK(run("eval --checkpoint " + kDir + "/broken.ckpt --data " + kDir + "/data").status == 1);
  }

  SUBCASE("mmd runs on raw pixels and on features") {
    RunResult raw = run("mmd --data " + kDir + "/data --between V,I");
    REQUIRE(raw.status == 0);
    CHECK(raw.out.find("\"mmd\"") != std::string::npos);
    RunResult feat = run("mmd --data " + kDir + "/data --checkpoint " + kDir +
                         "/model.ckpt --between V,Z --seed 3");
    CHECK(feat.status == 0);
    RunResult iz = run("mmd --data " + kDir + "/data --between I,Z");
    CHECK(iz.status == 0);
  }

  SUBCASE("hist writes the 50-bin CSV") {
    REQUIRE(run("hist --checkpoint " + kDir + "/model.ckpt --data " + kDir + "/data --out " +
                kDir + "/hist.csv")
                .status == 0);
    std::ifstream in(kDir + "/hist.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "bin_left,bin_right,pos_count,neg_count");
  }

  SUBCASE("ablate writes the 16-cell grid") {
    std::ofstream quick(kDir + "/quick.cfg");
    quick << "synth.num_identities = 5\nsynth.images_per_identity = 3\n"
             "synth.height = 12\nsynth.width = 6\n"
             "train.epochs = 1\ntrain.iterations_per_epoch = 2\n"
             "train.batch_persons = 2\ntrain.images_per_person = 2\n"
             "model.feature_dim = 8\nmodel.stem_width = 2\n"
             "model.trunk_width1 = 3\nmodel.trunk_width2 = 4\n"
             "eval.num_trials = 1\n";
    quick.close();
    REQUIRE(run("ablate --config " + kDir + "/quick.cfg --data " + kDir + "/data --out " +
                kDir + "/ablation.csv")
                .status == 0);
    std::ifstream in(kDir + "/ablation.csv");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(std::count(text.begin(), text.end(), '\n') == 17);
  }
}

TEST_CASE("failures exit with status 1") {
  std::filesystem::create_directories(kDir);
  std::ofstream bad(kDir + "/bad.cfg");
  bad << "nonsense.key = 1\n";
  bad.close();
  CHECK(run("generate --config " + kDir + "/bad.cfg --out-dir " + kDir + "/x").status == 1);
  CHECK(run("eval --checkpoint " + kDir + "/missing.ckpt --data " + kDir + "/data").status == 1);
  CHECK(run("train --config " + kDir + "/bad.cfg --data nowhere --out " + kDir + "/x.ckpt").status == 1);
}

int main(int argc, char** argv) {
  if (argc > 1) g_binary = argv[argc - 1];
  doctest::Context context;
  context.applyCommandLine(argc - (argc > 1 ? 1 : 0), argv);
  return context.run();
}
