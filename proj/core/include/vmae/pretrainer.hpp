#pragma once

#include "vmae/dataio.hpp"
#include "vmae/losses.hpp"
#include "vmae/optimizer.hpp"
#include "vmae/params.hpp"
#include "vmae/semantic_prior.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace vmae {

// Everything needed to continue training exactly where it stopped.
struct TrainState {
  ModelParams params;
  AdamWState optimizer;
  long step = 0;        // successful updates so far
  int epoch = 0;        // completed epochs
  long faults = 0;      // skipped updates (non-finite loss or gradient)
  std::uint64_t seed = 0;

  static TrainState fresh(const ModelConfig& config, std::uint64_t seed);
};

struct StepContext {
  LossOptions loss;
  AdamWConfig optim;
  double lr = 0.0;
  const FrozenEmbedder* embedder = nullptr;
};

struct StepResult {
  LossBreakdown losses;
  bool faulted = false;
  double grad_norm = 0.0;
};

// One AdamW update. On a non-finite loss or gradient the state is left
// untouched apart from the fault counter.
StepResult train_step(TrainState& state, const LossBatch& batch, const StepContext& context);

// Mask seed used for the batch processed at a given global step.
std::uint64_t step_mask_seed(std::uint64_t seed, long step);

struct PretrainOptions {
  ModelConfig model;
  LossOptions loss;
  AdamWConfig optim;
  double warmup_fraction = 0.05;
  int epochs = 100;
  int batch_size = 16;
  long max_steps = 0;  // > 0 caps the total number of steps
  std::uint64_t seed = 0;
  int checkpoint_every = 1;  // epochs
  int keep_checkpoints = 2;
  bool resume = true;
  // Testing hook: stop after this many epochs of the current invocation.
  int halt_after_epochs = 0;
};

struct PretrainResult {
  std::filesystem::path final_checkpoint;
  long steps = 0;
  long faults = 0;
  bool completed = false;
  std::vector<LossBreakdown> history;  // this invocation only
};

long planned_total_steps(const PretrainOptions& options, int dataset_size);

// Per-epoch checkpoints under out_dir/checkpoints, a metrics log at
// out_dir/metrics.csv and out_dir/final.vmae at the end. With resume set,
// continues from the newest epoch checkpoint found in out_dir.
PretrainResult pretrain(const PretrainOptions& options, const Dataset& dataset,
                        const std::filesystem::path& out_dir, const FrozenEmbedder& embedder);

// The logged components: disabled losses are written as 0.
std::string format_metrics_line(long step, const LossBreakdown& losses, double lr);
inline constexpr const char* kMetricsHeader = "# step,l_r,l_mim,l_cls,l_cf,l_cs,total,lr";

}  // namespace vmae
