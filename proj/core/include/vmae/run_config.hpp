#pragma once

#include "vmae/config.hpp"
#include "vmae/losses.hpp"
#include "vmae/optimizer.hpp"
#include "vmae/pretrainer.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

namespace vmae {

struct EmbedderSettings {
  EmbedderKind kind = EmbedderKind::stub;
  std::filesystem::path bank;  // file_bank only
  std::uint64_t seed = 0;      // stub only
};

// Everything a pre-training run needs. Defaults are the full-size
// optimizer settings with the desk-scale model.
struct RunConfig {
  std::string preset = "desk";
  ModelConfig model = desk_model_config();
  LossOptions loss;
  AdamWConfig optim;
  double warmup_fraction = 0.05;
  int epochs = 100;
  int batch_size = 16;
  long max_steps = 0;
  int checkpoint_every = 1;
  int keep_checkpoints = 2;
  std::uint64_t seed = 0;
  std::filesystem::path data;  // manifest path; the CLI flag takes precedence
  EmbedderSettings embedder;

  PretrainOptions pretrain_options() const;
};

ModelConfig preset_model_config(const std::string& name);  // desk | full | tiny

// YAML document with sections model, loss (weights, toggles), optim, train,
// data and embedder. Unknown keys and ill-typed values raise ConfigError
// naming the source, the line and the dotted key.
RunConfig parse_run_config(const std::string& text, const std::string& source = "<config>");
RunConfig load_run_config(const std::filesystem::path& path);
std::string dump_run_config(const RunConfig& config);

// VMAE_SEED, when set, replaces the configured seed.
void apply_seed_override(RunConfig& config);
std::optional<std::uint64_t> seed_from_env();

}  // namespace vmae
