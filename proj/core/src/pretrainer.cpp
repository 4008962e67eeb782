#include "vmae/pretrainer.hpp"

#include "vmae/checkpoint.hpp"
#include "vmae/errors.hpp"
#include "vmae/random.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <regex>
#include <sstream>

namespace vmae {

namespace fs = std::filesystem;

TrainState TrainState::fresh(const ModelConfig& config, std::uint64_t seed) {
  TrainState s;
  s.params = init_params(config, seed);
  s.optimizer = AdamWState::zeros_like(s.params);
  s.seed = seed;
  return s;
}

std::uint64_t step_mask_seed(std::uint64_t seed, long step) {
  return mix_seed(seed, static_cast<std::uint64_t>(step));
}

StepResult train_step(TrainState& state, const LossBatch& batch, const StepContext& context) {
  if (context.embedder == nullptr) throw ParameterError("train_step needs a frozen embedder");
  LossEvaluation eval = evaluate_loss(batch, state.params, context.loss, *context.embedder, true);
  StepResult result;
  result.losses = eval.breakdown;
  if (!eval.breakdown.all_finite() || !all_finite(eval.gradients)) {
    result.faulted = true;
    ++state.faults;
    return result;
  }
  result.grad_norm = context.optim.grad_clip > 0.0 ? clip_grad_norm(eval.gradients, context.optim.grad_clip)
                                                   : global_grad_norm(eval.gradients);
  adamw_update(state.params, state.optimizer, eval.gradients, context.lr, context.optim);
  ++state.step;
  return result;
}

long planned_total_steps(const PretrainOptions& options, int dataset_size) {
  if (dataset_size < 1 || options.batch_size < 1) return 0;
  const long per_epoch = (dataset_size + options.batch_size - 1) / options.batch_size;
  const long total = per_epoch * options.epochs;
  return options.max_steps > 0 ? std::min(total, options.max_steps) : total;
}

std::string format_metrics_line(long step, const LossBreakdown& losses, double lr) {
  auto num = [](double v) {
    char buf[40];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
    return std::string(buf, end);
  };
  const LossWeights& w = losses.weights;
  std::ostringstream os;
  os << step << ',' << num(w.r != 0.0 ? losses.l_r : 0.0) << ',' << num(w.mim != 0.0 ? losses.l_mim : 0.0) << ','
     << num(w.cls != 0.0 ? losses.l_cls : 0.0) << ',' << num(w.cf != 0.0 ? losses.l_cf : 0.0) << ','
     << num(w.cs != 0.0 ? losses.l_cs : 0.0) << ',' << num(losses.total) << ',' << num(lr);
  return os.str();
}

namespace {

fs::path epoch_checkpoint_path(const fs::path& dir, int epoch) {
  char name[32];
  std::snprintf(name, sizeof name, "epoch_%04d.vmae", epoch);
  return dir / name;
}

// Epoch checkpoints in ascending epoch order.
std::vector<std::pair<int, fs::path>> list_epoch_checkpoints(const fs::path& dir) {
  std::vector<std::pair<int, fs::path>> found;
  if (!fs::is_directory(dir)) return found;
  static const std::regex pattern(R"(epoch_(\d{4,})\.vmae)");
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (entry.is_regular_file() && std::regex_match(name, m, pattern)) {
      found.emplace_back(std::stoi(m[1].str()), entry.path());
    }
  }
  std::sort(found.begin(), found.end());
  return found;
}

// Drops log lines past `keep_through_step`, so a resumed run appends exactly
// where the checkpoint left off.
void truncate_metrics(const fs::path& path, long keep_through_step) {
  std::vector<std::string> kept;
  if (std::ifstream in(path); in) {
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (line[0] == '#') {
        kept.push_back(line);
        continue;
      }
      long step = 0;
      auto [p, ec] = std::from_chars(line.data(), line.data() + line.size(), step);
      if (ec == std::errc() && step <= keep_through_step) kept.push_back(line);
    }
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write metrics log " + path.string());
  if (kept.empty() || kept.front() != kMetricsHeader) out << kMetricsHeader << '\n';
  for (const auto& l : kept) out << l << '\n';
}

void ensure_writable_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
  const fs::path probe = dir / ".write_probe";
  {
    std::ofstream out(probe, std::ios::trunc);
    if (!out || !(out << "ok")) throw IoError("output directory is not writable: " + dir.string());
  }
  fs::remove(probe, ec);
}

}  // namespace

PretrainResult pretrain(const PretrainOptions& options, const Dataset& dataset, const fs::path& out_dir,
                        const FrozenEmbedder& embedder) {
  if (dataset.size() == 0) throw InputError("pretrain: dataset is empty");
  if (options.batch_size < 1) throw ParameterError("pretrain: batch_size must be >= 1");
  if (options.epochs < 0) throw ParameterError("pretrain: epochs must be >= 0");
  if (options.checkpoint_every < 1) throw ParameterError("pretrain: checkpoint_every must be >= 1");
  options.model.validate();
  options.loss.weights.validate();
  options.optim.validate();
  if (embedder.dim() != options.model.sem_dim) {
    throw ConfigError("embedder dimension " + std::to_string(embedder.dim()) + " differs from sem_dim " +
                      std::to_string(options.model.sem_dim));
  }

  const fs::path ckpt_dir = out_dir / "checkpoints";
  const fs::path metrics_path = out_dir / "metrics.csv";
  ensure_writable_dir(out_dir);
  ensure_writable_dir(ckpt_dir);

  TrainState state = TrainState::fresh(options.model, options.seed);
  const auto existing = list_epoch_checkpoints(ckpt_dir);
  if (options.resume && !existing.empty()) {
    state = load_checkpoint(existing.back().second, options.model);
    if (state.seed != options.seed) {
      throw ConfigError("checkpoint " + existing.back().second.string() + " was trained with seed " +
                        std::to_string(state.seed) + ", requested " + std::to_string(options.seed));
    }
  } else if (!options.resume) {
    for (const auto& [epoch, path] : existing) fs::remove(path);
  }
  truncate_metrics(metrics_path, state.step);

  const long total = planned_total_steps(options, dataset.size());
  const LrSchedule schedule(options.optim.lr, total, options.warmup_fraction);
  StepContext ctx{options.loss, options.optim, 0.0, &embedder};

  PretrainResult result;
  std::ofstream log(metrics_path, std::ios::app);
  if (!log) throw IoError("cannot append to " + metrics_path.string());

  int epochs_this_run = 0;
  bool halted = false;
  while (state.epoch < options.epochs && state.step < total) {
    const auto batches = make_batches(dataset, options.batch_size, options.seed, state.epoch);
    for (const DataBatch& b : batches) {
      if (state.step >= total) break;
      ctx.lr = schedule.at(state.step);
      const LossBatch lb = to_loss_batch(b, step_mask_seed(options.seed, state.step + state.faults));
      const StepResult r = train_step(state, lb, ctx);
      if (r.faulted) continue;
      result.history.push_back(r.losses);
      log << format_metrics_line(state.step, r.losses, ctx.lr) << '\n';
    }
    log.flush();
    if (state.step >= total && state.epoch + 1 < options.epochs) break;  // capped mid-run
    ++state.epoch;
    ++epochs_this_run;
    if (state.epoch % options.checkpoint_every == 0 || state.epoch == options.epochs) {
      save_checkpoint(state, epoch_checkpoint_path(ckpt_dir, state.epoch));
      auto all = list_epoch_checkpoints(ckpt_dir);
      const auto keep = static_cast<std::size_t>(std::max(1, options.keep_checkpoints));
      for (std::size_t i = 0; i + keep < all.size(); ++i) fs::remove(all[i].second);
    }
    if (options.halt_after_epochs > 0 && epochs_this_run >= options.halt_after_epochs &&
        state.epoch < options.epochs && state.step < total) {
      halted = true;
      break;
    }
  }
  if (!log) throw IoError("failed writing " + metrics_path.string());

  result.steps = state.step;
  result.faults = state.faults;
  if (!halted) {
    result.final_checkpoint = out_dir / "final.vmae";
    save_checkpoint(state, result.final_checkpoint);
    result.completed = true;
  }
  return result;
}

}  // namespace vmae
