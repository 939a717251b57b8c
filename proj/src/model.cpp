#include "lupi/model.hpp"

#include <cmath>

namespace lupi {

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Tensor kaiming_uniform(std::uint64_t seed, const std::string& name, Shape shape,
                       std::size_t fan_in) {
  Rng rng = make_stream(seed, stream::kInit, fnv1a(name));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from_data(std::move(shape), std::move(v));
}

}  // namespace

std::string stem_prefix(Modality tag) {
  switch (tag) {
    case Modality::kVisible: return "stem_v";
    case Modality::kInfrared: return "stem_i";
    case Modality::kIntermediate: return "stem_z";
  }
  fail("stem_prefix: bad modality");
}

ModelParams init_params(std::uint64_t seed, const ModelConfig& cfg) {
  if (cfg.feature_dim == 0 || cfg.num_classes == 0 || cfg.stem_width == 0 ||
      cfg.trunk_width1 == 0 || cfg.trunk_width2 == 0)
    fail("init_params: all extents must be positive");
  ModelParams params;
  params.config = cfg;
  auto& t = params.tensors;

  auto conv = [&](const std::string& name, std::size_t out_ch, std::size_t in_ch) {
    t[name + ".w"] = kaiming_uniform(seed, name + ".w", {out_ch, in_ch, 3, 3}, in_ch * 9);
    t[name + ".b"] = Tensor::zeros({out_ch});
  };
  conv("stem_v", cfg.stem_width, 3);
  conv("stem_i", cfg.stem_width, 1);
  conv("stem_z", cfg.stem_width, 1);
  conv("trunk.conv1", cfg.trunk_width1, cfg.stem_width);
  conv("trunk.conv2", cfg.trunk_width2, cfg.trunk_width1);
  t["trunk.proj.w"] = kaiming_uniform(seed, "trunk.proj.w",
                                      {cfg.trunk_width2, cfg.feature_dim}, cfg.trunk_width2);
  t["trunk.proj.b"] = Tensor::zeros({cfg.feature_dim});
  t["classifier.w"] = kaiming_uniform(seed, "classifier.w",
                                      {cfg.feature_dim, cfg.num_classes}, cfg.feature_dim);
  t["classifier.b"] = Tensor::zeros({cfg.num_classes});
  return params;
}

Tensor images_to_tensor(const std::vector<Image>& batch) {
  if (batch.empty()) fail("images_to_tensor: empty batch");
  const Image& first = batch[0];
  for (const Image& img : batch)
    if (!img.same_extents(first)) fail("images_to_tensor: mixed extents in batch");
  const std::size_t B = batch.size(), C = first.channels, H = first.height, W = first.width;
  std::vector<double> v(B * C * H * W);
  // Centering removes the mid-gray DC component, which would otherwise
  // dominate every pooled feature.
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x)
          v[((n * C + c) * H + y) * W + x] = batch[n].at(y, x, c) - 0.5;
  return Tensor::from_data({B, C, H, W}, std::move(v));
}

void watch_all(Tape& tape, const ModelParams& params) {
  for (const auto& [name, tensor] : params.tensors) tape.watch(name, tensor);
}

EmbeddingBatch embed(const ModelParams& params, const std::vector<Image>& batch,
                     Modality tag, const std::vector<int>& labels) {
  if (batch.empty()) fail("embed: empty batch");
  if (labels.size() != batch.size())
    fail("embed: " + std::to_string(labels.size()) + " labels for " +
         std::to_string(batch.size()) + " images");
  const std::size_t want_ch = tag == Modality::kVisible ? 3 : 1;
  if (batch[0].channels != want_ch)
    fail("embed: " + std::to_string(batch[0].channels) + "-channel batch fed to the " +
         stem_prefix(tag) + " stream");

  auto P = [&](const std::string& name) -> Tensor {
    const Tensor& v = params.tensors.at(name);
    Tape* tape = Tape::active();
    return tape ? tape->watch(name, v) : v;
  };

  const std::string stem = stem_prefix(tag);
  Tensor x = images_to_tensor(batch);
  Tensor h = relu(instance_norm2d(conv2d3x3(x, P(stem + ".w"), P(stem + ".b"))));
  h = avg_pool2(relu(instance_norm2d(conv2d3x3(h, P("trunk.conv1.w"), P("trunk.conv1.b")))));
  h = avg_pool2(relu(instance_norm2d(conv2d3x3(h, P("trunk.conv2.w"), P("trunk.conv2.b")))));
  Tensor pooled = global_avg_pool(h);
  Tensor pre = add_rowvec(matmul(pooled, P("trunk.proj.w")), P("trunk.proj.b"));

  EmbeddingBatch out;
  out.logits = add_rowvec(matmul(pre, P("classifier.w")), P("classifier.b"));
  out.features = l2_normalize(pre);
  out.labels = labels;
  out.modality.assign(batch.size(), tag);
  return out;
}

}  // namespace lupi
