#pragma once

#include <map>
#include <string>

#include "lupi/data.hpp"
#include "lupi/eval.hpp"
#include "lupi/trainer.hpp"

namespace lupi {

// One experiment configuration: `key = value` lines, '#' comments, unknown
// keys rejected. Every random decision downstream derives from the seeds
// named here, so a config fully determines a run.
struct RunConfig {
  SynthConfig synth;
  TrainConfig train;  // carries LossConfig and ModelConfig
  EvalProtocol protocol;
};

std::map<std::string, std::string> parse_kv(const std::string& text);

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);

// Sorted keys with defaults resolved; what checkpoints embed and commands log.
std::string canonical_echo(const RunConfig& cfg);

// Rebuilds the model hyper-shapes from a checkpoint's config echo.
ModelConfig model_config_from_echo(const std::string& echo);

}  // namespace lupi
