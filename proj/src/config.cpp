#include "lupi/config.hpp"

#include <fstream>
#include <sstream>

namespace lupi {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

std::size_t to_size(const std::string& key, const std::string& v) {
  try {
    const long long n = std::stoll(v);
    if (n < 0) throw std::out_of_range("negative");
    return static_cast<std::size_t>(n);
  } catch (const std::exception&) {
    fail("config: bad integer for " + key + ": '" + v + "'");
  }
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    fail("config: bad seed for " + key + ": '" + v + "'");
  }
}

double to_double(const std::string& key, const std::string& v) {
  try {
    return std::stod(v);
  } catch (const std::exception&) {
    fail("config: bad real for " + key + ": '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  fail("config: bad boolean for " + key + ": '" + v + "'");
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::map<std::string, std::string> parse_kv(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      fail("config: line " + std::to_string(line_no) + " is not 'key = value'");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key.empty() || value.empty())
      fail("config: line " + std::to_string(line_no) + " is not 'key = value'");
    kv[key] = value;
  }
  return kv;
}

RunConfig parse_run_config(const std::string& text) {
  RunConfig cfg;
  for (const auto& [key, v] : parse_kv(text)) {
    if (key == "synth.num_identities") cfg.synth.num_identities = to_size(key, v);
    else if (key == "synth.images_per_identity")
      cfg.synth.images_per_identity_per_modality = to_size(key, v);
    else if (key == "synth.height") cfg.synth.height = to_size(key, v);
    else if (key == "synth.width") cfg.synth.width = to_size(key, v);
    else if (key == "synth.num_cameras_v") cfg.synth.num_cameras_v = to_size(key, v);
    else if (key == "synth.num_cameras_i") cfg.synth.num_cameras_i = to_size(key, v);
    else if (key == "synth.color_signal_strength")
      cfg.synth.color_signal_strength = to_double(key, v);
    else if (key == "synth.texture_signal_strength")
      cfg.synth.texture_signal_strength = to_double(key, v);
    else if (key == "synth.noise_level") cfg.synth.noise_level = to_double(key, v);
    else if (key == "synth.seed") cfg.synth.rng_seed = to_u64(key, v);
    else if (key == "train.epochs") cfg.train.epochs = to_size(key, v);
    else if (key == "train.iterations_per_epoch")
      cfg.train.iterations_per_epoch = to_size(key, v);
    else if (key == "train.batch_persons") cfg.train.batch_persons = to_size(key, v);
    else if (key == "train.images_per_person")
      cfg.train.images_per_person = to_size(key, v);
    else if (key == "train.lr") cfg.train.lr = to_double(key, v);
    else if (key == "train.momentum") cfg.train.momentum = to_double(key, v);
    else if (key == "train.weight_decay") cfg.train.weight_decay = to_double(key, v);
    else if (key == "train.warmup_epochs") cfg.train.warmup_epochs = to_size(key, v);
    else if (key == "train.intermediate_mode")
      cfg.train.intermediate_mode = parse_intermediate_mode(v);
    else if (key == "train.seed") cfg.train.seed = to_u64(key, v);
    else if (key == "loss.margin") cfg.train.loss.margin = to_double(key, v);
    else if (key == "loss.alpha_c") cfg.train.loss.alpha_c = to_double(key, v);
    else if (key == "loss.lambda") cfg.train.loss.lambda = to_double(key, v);
    else if (key == "loss.cf_threshold") cfg.train.loss.cf_threshold = to_double(key, v);
    else if (key == "loss.triplet_enabled")
      cfg.train.loss.triplet_enabled = to_bool(key, v);
    else if (key == "loss.color_free_enabled")
      cfg.train.loss.color_free_enabled = to_bool(key, v);
    else if (key == "model.feature_dim") cfg.train.model.feature_dim = to_size(key, v);
    else if (key == "model.num_classes") cfg.train.model.num_classes = to_size(key, v);
    else if (key == "model.stem_width") cfg.train.model.stem_width = to_size(key, v);
    else if (key == "model.trunk_width1") cfg.train.model.trunk_width1 = to_size(key, v);
    else if (key == "model.trunk_width2") cfg.train.model.trunk_width2 = to_size(key, v);
    else if (key == "eval.query_modality")
      cfg.protocol.query_modality = parse_modality(v);
    else if (key == "eval.gallery_modality")
      cfg.protocol.gallery_modality = parse_modality(v);
    else if (key == "eval.shot_mode") {
      if (v == "single") cfg.protocol.shot_mode = ShotMode::kSingle;
      else if (v == "multi") cfg.protocol.shot_mode = ShotMode::kMulti;
      else fail("config: bad shot mode '" + v + "'");
    } else if (key == "eval.exclude_same_camera")
      cfg.protocol.exclude_same_camera = to_bool(key, v);
    else if (key == "eval.num_trials") cfg.protocol.num_trials = to_size(key, v);
    else if (key == "eval.seed") cfg.protocol.rng_seed = to_u64(key, v);
    else fail("config: unknown key '" + key + "'");
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("config: cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str());
}

std::string canonical_echo(const RunConfig& cfg) {
  std::map<std::string, std::string> kv;
  kv["synth.num_identities"] = std::to_string(cfg.synth.num_identities);
  kv["synth.images_per_identity"] =
      std::to_string(cfg.synth.images_per_identity_per_modality);
  kv["synth.height"] = std::to_string(cfg.synth.height);
  kv["synth.width"] = std::to_string(cfg.synth.width);
  kv["synth.num_cameras_v"] = std::to_string(cfg.synth.num_cameras_v);
  kv["synth.num_cameras_i"] = std::to_string(cfg.synth.num_cameras_i);
  kv["synth.color_signal_strength"] = fmt(cfg.synth.color_signal_strength);
  kv["synth.texture_signal_strength"] = fmt(cfg.synth.texture_signal_strength);
  kv["synth.noise_level"] = fmt(cfg.synth.noise_level);
  kv["synth.seed"] = std::to_string(cfg.synth.rng_seed);
  kv["train.epochs"] = std::to_string(cfg.train.epochs);
  kv["train.iterations_per_epoch"] = std::to_string(cfg.train.iterations_per_epoch);
  kv["train.batch_persons"] = std::to_string(cfg.train.batch_persons);
  kv["train.images_per_person"] = std::to_string(cfg.train.images_per_person);
  kv["train.lr"] = fmt(cfg.train.lr);
  kv["train.momentum"] = fmt(cfg.train.momentum);
  kv["train.weight_decay"] = fmt(cfg.train.weight_decay);
  kv["train.warmup_epochs"] = std::to_string(cfg.train.warmup_epochs);
  kv["train.intermediate_mode"] = intermediate_mode_name(cfg.train.intermediate_mode);
  kv["train.seed"] = std::to_string(cfg.train.seed);
  kv["loss.margin"] = fmt(cfg.train.loss.margin);
  kv["loss.alpha_c"] = fmt(cfg.train.loss.alpha_c);
  kv["loss.lambda"] = fmt(cfg.train.loss.lambda);
  kv["loss.cf_threshold"] = fmt(cfg.train.loss.cf_threshold);
  kv["loss.triplet_enabled"] = cfg.train.loss.triplet_enabled ? "true" : "false";
  kv["loss.color_free_enabled"] = cfg.train.loss.color_free_enabled ? "true" : "false";
  kv["model.feature_dim"] = std::to_string(cfg.train.model.feature_dim);
  kv["model.num_classes"] = std::to_string(cfg.train.model.num_classes);
  kv["model.stem_width"] = std::to_string(cfg.train.model.stem_width);
  kv["model.trunk_width1"] = std::to_string(cfg.train.model.trunk_width1);
  kv["model.trunk_width2"] = std::to_string(cfg.train.model.trunk_width2);
  kv["eval.query_modality"] = modality_name(cfg.protocol.query_modality);
  kv["eval.gallery_modality"] = modality_name(cfg.protocol.gallery_modality);
  kv["eval.shot_mode"] = cfg.protocol.shot_mode == ShotMode::kSingle ? "single" : "multi";
  kv["eval.exclude_same_camera"] = cfg.protocol.exclude_same_camera ? "true" : "false";
  kv["eval.num_trials"] = std::to_string(cfg.protocol.num_trials);
  kv["eval.seed"] = std::to_string(cfg.protocol.rng_seed);

  std::ostringstream os;
  for (const auto& [key, value] : kv) os << key << " = " << value << "\n";
  return os.str();
}

ModelConfig model_config_from_echo(const std::string& echo) {
  // The echo is itself a valid config; reparse and keep the model section.
  return parse_run_config(echo).train.model;
}

}  // namespace lupi
