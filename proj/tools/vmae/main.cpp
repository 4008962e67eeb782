#include "vmae/checkpoint.hpp"
#include "vmae/dataio.hpp"
#include "vmae/downstream.hpp"
#include "vmae/errors.hpp"
#include "vmae/metrics.hpp"
#include "vmae/pretrainer.hpp"
#include "vmae/reconstruct.hpp"
#include "vmae/run_config.hpp"
#include "vmae/tokenizer.hpp"

#include <CLI11.hpp>

#include <fcntl.h>
#include <unistd.h>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using namespace vmae;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumeric = 4;

// Exclusive marker file under an output directory; removed on scope exit.
class RunLock {
 public:
  explicit RunLock(const fs::path& dir) : path_(dir / "run.lock") {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
      throw IoError(path_.string() + " exists: another run is writing here (delete the file if it is stale)");
    }
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
    ::close(fd);
  }
  ~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  fs::path path_;
};

fs::path manifest_path(const fs::path& data) {
  if (fs::is_directory(data)) return data / "manifest.tsv";
  return data;
}

Dataset load_data(const fs::path& data) { return load_dataset(load_manifest(manifest_path(data))); }

std::unique_ptr<FrozenEmbedder> make_embedder(const EmbedderSettings& s, int sem_dim) {
  if (s.kind == EmbedderKind::stub) return stub_embedder(s.seed, sem_dim);
  auto bank = std::make_unique<FileBankEmbedder>(load_embedding_bank(s.bank));
  if (bank->dim() != sem_dim) {
    throw ConfigError("embedding bank has dimension " + std::to_string(bank->dim()) + ", model sem_dim is " +
                      std::to_string(sem_dim));
  }
  return bank;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out || !(out << text)) throw IoError("cannot write " + path.string());
}

void print_report(const MetricReport& r) { std::cout << r.to_text(); }

// ---- gen-data ----

struct GenArgs {
  int n = 64;
  int size = 32;
  std::uint64_t seed = 0;
  double caption_frac = 0.3;
  bool no_outlines = false;
  std::string out;
};

int run_gen_data(const GenArgs& a) {
  if (a.n < 1) throw ConfigError("--n must be >= 1");
  if (!(a.caption_frac >= 0.0 && a.caption_frac <= 1.0)) throw ConfigError("--caption-frac must lie in [0, 1]");
  RunLock lock(a.out);
  SyntheticOptions o;
  o.n = a.n;
  o.image_size = a.size;
  o.seed = a.seed;
  o.caption_fraction = a.caption_frac;
  o.write_outlines = !a.no_outlines;
  const auto ds = generate_synthetic(o, a.out);
  long captioned = 0;
  for (const auto& r : ds.manifest.records) captioned += r.caption.has_value();
  std::cout << "wrote " << ds.manifest.records.size() << " records (" << captioned << " captioned) to "
            << (fs::path(a.out) / "manifest.tsv").string() << "\n";
  return kExitOk;
}

// ---- pretrain / ablate ----

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  std::string preset;
  long steps = -1;
  int epochs = -1;
  bool no_resume = false;
  int halt_after = 0;
};

RunConfig resolve_run_config(const TrainArgs& a) {
  RunConfig c = a.config.empty() ? RunConfig{} : load_run_config(a.config);
  if (!a.preset.empty()) {
    c.preset = a.preset;
    c.model = preset_model_config(a.preset);
  }
  if (a.steps >= 0) c.max_steps = a.steps;
  if (a.epochs >= 0) c.epochs = a.epochs;
  if (!a.data.empty()) c.data = a.data;
  if (c.data.empty()) throw ConfigError("no dataset given (use --data or data.manifest in the config)");
  apply_seed_override(c);
  return c;
}

struct CellOutcome {
  PretrainResult result;
  int masked_count = 0;
};

CellOutcome run_cell(const RunConfig& cfg, const Dataset& ds, const fs::path& out, const TrainArgs& a) {
  PretrainOptions o = cfg.pretrain_options();
  o.resume = !a.no_resume;
  o.halt_after_epochs = a.halt_after;
  fs::create_directories(out);
  write_text(out / "config.yaml", dump_run_config(cfg));
  const auto embedder = make_embedder(cfg.embedder, cfg.model.sem_dim);
  CellOutcome c;
  c.result = pretrain(o, ds, out, *embedder);
  c.masked_count = masked_count(cfg.model.n_patches(), cfg.model.mask_ratio);
  return c;
}

int run_pretrain(const TrainArgs& a) {
  const RunConfig cfg = resolve_run_config(a);
  RunLock lock(a.out);
  const Dataset ds = load_data(cfg.data);
  const CellOutcome c = run_cell(cfg, ds, a.out, a);
  std::cout << "steps " << c.result.steps << ", faults " << c.result.faults;
  if (c.result.completed) std::cout << ", final checkpoint " << c.result.final_checkpoint.string();
  else std::cout << ", halted before completion";
  std::cout << "\n";
  return c.result.faults > 0 ? kExitNumeric : kExitOk;
}

struct AblationRow {
  const char* name;
  LossToggles toggles;
};

// Loss rows of the loss-function ablation, in table order.
const std::vector<AblationRow>& loss_rows() {
  static const std::vector<AblationRow> rows = {
      {"r", {true, false, false, false, false}},
      {"r+mim", {true, true, false, false, false}},
      {"r+mim+cls", {true, true, true, false, false}},
      {"r+cs", {true, false, false, false, true}},
      {"r+cs+cf", {true, false, false, true, true}},
      {"all", {true, true, true, true, true}},
  };
  return rows;
}

const std::vector<double>& ratio_sweep() {
  static const std::vector<double> ratios = {0.25, 0.5, 0.75, 0.85};
  return ratios;
}

int run_ablate(const TrainArgs& a, const std::string& grid, bool probe) {
  if (grid != "loss" && grid != "ratio" && grid != "all") throw ConfigError("--grid must be loss, ratio or all");
  const RunConfig base = resolve_run_config(a);
  RunLock lock(a.out);
  const Dataset ds = load_data(base.data);

  std::ostringstream summary;
  summary << "cell\tmask_ratio\tmasked_count\tsteps\tfaults\tl_r\tl_mim\tl_cls\tl_cf\tl_cs\ttotal";
  if (probe) summary << "\tprobe_mA";
  summary << "\n";
  long faults = 0;
  auto run = [&](const std::string& name, const RunConfig& cfg) {
    const fs::path dir = fs::path(a.out) / name;
    std::cout << "== " << name << "\n" << std::flush;
    const CellOutcome c = run_cell(cfg, ds, dir, a);
    faults += c.result.faults;
    std::string line = "0,0,0,0,0,0,0,0";
    {
      std::ifstream log(dir / "metrics.csv");
      for (std::string l; std::getline(log, l);)
        if (!l.empty() && l[0] != '#') line = l;
    }
    summary << name << '\t' << cfg.model.mask_ratio << '\t' << c.masked_count << '\t' << c.result.steps << '\t'
            << c.result.faults;
    std::istringstream fields(line);
    std::string field;
    std::getline(fields, field, ',');  // step
    for (int k = 0; k < 6; ++k) {
      std::getline(fields, field, ',');
      summary << '\t' << field;
    }
    if (probe && c.result.completed) {
      const TrainState st = load_checkpoint(c.result.final_checkpoint);
      ProbeConfig pc;
      pc.seed = cfg.seed;
      const ProbeResult pr = linear_probe(st.params, ds, pc);
      pr.report.save(dir / "probe_report.txt");
      summary << '\t' << pr.report.at("mA");
    }
    summary << "\n";
  };
  if (grid == "loss" || grid == "all") {
    for (const auto& row : loss_rows()) {
      RunConfig cfg = base;
      cfg.loss.toggles = row.toggles;
      run("loss/" + std::string(row.name), cfg);
    }
  }
  if (grid == "ratio" || grid == "all") {
    for (double r : ratio_sweep()) {
      RunConfig cfg = base;
      cfg.model.mask_ratio = r;
      char name[32];
      std::snprintf(name, sizeof name, "ratio/%.2f", r);
      run(name, cfg);
    }
  }
  write_text(fs::path(a.out) / "ablation.tsv", summary.str());
  std::cout << summary.str();
  return faults > 0 ? kExitNumeric : kExitOk;
}

// ---- probe / finetune / eval ----

struct ProbeArgs {
  std::string checkpoint;
  std::string data;
  std::string task = "attribute";
  std::string out;
  std::optional<int> epochs;
  std::optional<double> lr;
  std::uint64_t seed = 0;
};

ProbeConfig probe_config(const ProbeArgs& a) {
  ProbeConfig pc;
  pc.task = parse_probe_task(a.task);
  pc.seed = a.seed;
  if (a.epochs) pc.epochs = *a.epochs;
  if (a.lr) pc.head_lr = *a.lr;
  return pc;
}

int run_probe(const ProbeArgs& a, bool fine) {
  const ProbeConfig pc = probe_config(a);
  std::optional<RunLock> lock;
  if (!a.out.empty()) lock.emplace(a.out);
  const TrainState st = load_checkpoint(a.checkpoint);
  const Dataset ds = load_data(a.data);
  const ProbeResult r = fine ? finetune(st.params, ds, pc) : linear_probe(st.params, ds, pc);
  if (!a.out.empty()) {
    r.report.save(fs::path(a.out) / "report.txt");
    save_score_table(r.test_scores, fs::path(a.out) / "predictions.tsv");
  }
  print_report(r.report);
  return kExitOk;
}

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string task = "attribute";
  std::string predictions;
  std::string confusion;
  std::string out;
  double threshold = 0.5;
  std::uint64_t seed = 0;
};

MetricReport score_predictions(const EvalArgs& a) {
  if (a.data.empty()) throw ConfigError("--predictions needs --data for the ground truth");
  const DatasetManifest m = load_manifest(manifest_path(a.data));
  const ScoreTable t = load_score_table(a.predictions);
  std::map<std::string, const ManifestRecord*> by_id;
  for (const auto& r : m.records) by_id[r.image_path.stem().string()] = &r;
  auto lookup = [&](const std::string& id) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw InputError("prediction id '" + id + "' is not in the manifest");
    return it->second;
  };
  const ProbeTask task = parse_probe_task(a.task);
  if (task == ProbeTask::attribute) {
    PredictionSet ps{t.scores, Matrix(t.scores.rows(), t.scores.cols()), TaskKind::multilabel};
    for (std::size_t i = 0; i < t.ids.size(); ++i) {
      const auto* rec = lookup(t.ids[i]);
      if (static_cast<Index>(rec->attributes.size()) != t.scores.cols())
        throw InputError("prediction table has " + std::to_string(t.scores.cols()) + " columns, manifest has " +
                         std::to_string(rec->attributes.size()) + " attributes");
      for (std::size_t j = 0; j < rec->attributes.size(); ++j)
        ps.ground_truth(static_cast<Index>(i), static_cast<Index>(j)) = rec->attributes[j];
    }
    return attribute_metrics(ps, a.threshold);
  }
  std::vector<int> labels;
  for (const auto& id : t.ids) labels.push_back(lookup(id)->fine_label);
  return classification_metrics(t.scores, labels);
}

int run_eval(const EvalArgs& a) {
  MetricReport report;
  if (!a.confusion.empty()) {
    report = segmentation_metrics(load_confusion(a.confusion));
  } else if (!a.predictions.empty()) {
    report = score_predictions(a);
  } else {
    if (a.checkpoint.empty()) throw ConfigError("eval needs --checkpoint, --predictions or --confusion");
    if (a.data.empty()) throw ConfigError("eval --checkpoint needs --data");
    const TrainState st = load_checkpoint(a.checkpoint);
    const Dataset ds = load_data(a.data);
    if (a.task == "retrieval") {
      report = retrieval_eval(st.params, ds);
    } else {
      ProbeConfig pc;
      pc.task = parse_probe_task(a.task);
      pc.seed = a.seed;
      pc.threshold = a.threshold;
      report = linear_probe(st.params, ds, pc).report;
    }
  }
  if (!a.out.empty()) report.save(a.out);
  print_report(report);
  return kExitOk;
}

// ---- reconstruct / export-bank ----

struct ReconArgs {
  std::string checkpoint;
  std::string image;
  std::string out;
  std::optional<double> mask_ratio;
  std::uint64_t seed = 0;
};

int run_reconstruct(const ReconArgs& a) {
  const TrainState st = load_checkpoint(a.checkpoint);
  const ImageTensor img = read_png(a.image);
  const double ratio = a.mask_ratio.value_or(st.params.config().mask_ratio);
  const Reconstruction r = reconstruct(st.params, img, ratio, a.seed);
  const fs::path out(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_png(r.panel, out);
  std::cout << "wrote " << r.panel.width() << "x" << r.panel.height() << " panel with " << r.mask.n_masked()
            << " masked patches to " << out.string() << "\n";
  return kExitOk;
}

struct BankArgs {
  std::string data;
  std::string out;
  int dim = 64;
  std::uint64_t seed = 0;
};

int run_export_bank(const BankArgs& a) {
  if (a.dim < 1) throw ConfigError("--dim must be >= 1");
  const Dataset ds = load_data(a.data);
  const StubEmbedder emb(a.seed, a.dim);
  std::vector<std::string> ids;
  std::vector<RowVector> rows;
  std::map<std::string, bool> seen;
  for (const auto& s : ds.samples) {
    ImageRef ref{&s.image, s.id, s.tags};
    ids.push_back(std::string(kImageKeyPrefix) + s.id);
    rows.push_back(emb.embed_image(ref));
    if (s.caption && !seen[*s.caption]) {
      seen[*s.caption] = true;
      ids.push_back(std::string(kTextKeyPrefix) + *s.caption);
      rows.push_back(emb.embed_text(*s.caption));
    }
  }
  TextEmbeddingBank bank;
  bank.ids = ids;
  bank.vectors.resize(static_cast<Index>(rows.size()), a.dim);
  for (std::size_t i = 0; i < rows.size(); ++i) bank.vectors.row(static_cast<Index>(i)) = rows[i];
  const fs::path out(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_embedding_bank(bank, out);
  std::cout << "wrote " << bank.size() << " vectors of dimension " << a.dim << " to " << out.string() << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vmae: masked-autoencoder pre-training with structural and semantic priors"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* c_gen = app.add_subcommand("gen-data", "Render a synthetic vehicle dataset");
  c_gen->add_option("--n", gen.n, "Number of images")->capture_default_str();
  c_gen->add_option("--size", gen.size, "Image side in pixels")->capture_default_str();
  c_gen->add_option("--seed", gen.seed, "Generator seed")->capture_default_str();
  c_gen->add_option("--caption-frac", gen.caption_frac, "Fraction of records with a caption")->capture_default_str();
  c_gen->add_flag("--no-outlines", gen.no_outlines, "Skip outline masks");
  c_gen->add_option("--out", gen.out, "Output directory")->required();

  TrainArgs train;
  auto add_train_opts = [&](CLI::App* c) {
    c->add_option("--config", train.config, "YAML run configuration");
    c->add_option("--data", train.data, "Manifest file or dataset directory");
    c->add_option("--out", train.out, "Output directory")->required();
    c->add_option("--preset", train.preset, "Model preset: desk, full or tiny");
    c->add_option("--steps", train.steps, "Cap on optimizer steps");
    c->add_option("--epochs", train.epochs, "Number of epochs");
    c->add_flag("--no-resume", train.no_resume, "Ignore existing checkpoints");
    c->add_option("--halt-after", train.halt_after, "Stop after this many epochs (simulates an interruption)");
  };
  auto* c_pre = app.add_subcommand("pretrain", "Pre-train the model");
  add_train_opts(c_pre);
  auto* c_abl = app.add_subcommand("ablate", "Loss-toggle and mask-ratio ablation grids");
  add_train_opts(c_abl);
  std::string grid = "all";
  bool ablate_probe = false;
  c_abl->add_option("--grid", grid, "loss, ratio or all")->capture_default_str();
  c_abl->add_flag("--probe", ablate_probe, "Linear-probe every cell on the attribute task");

  ProbeArgs probe;
  auto add_probe_opts = [&](CLI::App* c) {
    c->add_option("--checkpoint", probe.checkpoint, "Checkpoint file")->required();
    c->add_option("--data", probe.data, "Manifest file or dataset directory")->required();
    c->add_option("--task", probe.task, "attribute or fine_grained")->capture_default_str();
    c->add_option("--out", probe.out, "Directory for report.txt and predictions.tsv");
    c->add_option("--epochs", probe.epochs, "Head training epochs");
    c->add_option("--lr", probe.lr, "Head learning rate");
    c->add_option("--seed", probe.seed, "Split and shuffling seed")->capture_default_str();
  };
  auto* c_probe = app.add_subcommand("probe", "Linear probe on frozen encoder features");
  add_probe_opts(c_probe);
  auto* c_ft = app.add_subcommand("finetune", "Fine-tune encoder and head");
  add_probe_opts(c_ft);

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "Compute a metric report");
  c_eval->add_option("--checkpoint", ev.checkpoint, "Checkpoint to evaluate");
  c_eval->add_option("--data", ev.data, "Manifest file or dataset directory");
  c_eval->add_option("--task", ev.task, "attribute, fine_grained or retrieval")->capture_default_str();
  c_eval->add_option("--predictions", ev.predictions, "Score table to rescore against --data");
  c_eval->add_option("--confusion", ev.confusion, "Segmentation confusion matrix");
  c_eval->add_option("--threshold", ev.threshold, "Attribute decision threshold")->capture_default_str();
  c_eval->add_option("--seed", ev.seed, "Probe seed")->capture_default_str();
  c_eval->add_option("--out", ev.out, "Report file");

  ReconArgs rec;
  auto* c_rec = app.add_subcommand("reconstruct", "Write an original/masked/filled/error panel");
  c_rec->add_option("--checkpoint", rec.checkpoint, "Checkpoint file")->required();
  c_rec->add_option("--image", rec.image, "Input PNG")->required();
  c_rec->add_option("--out", rec.out, "Output PNG")->required();
  c_rec->add_option("--mask-ratio", rec.mask_ratio, "Mask ratio (default: the checkpoint's)");
  c_rec->add_option("--seed", rec.seed, "Mask seed")->capture_default_str();

  BankArgs bank;
  auto* c_bank = app.add_subcommand("export-bank", "Write stub embeddings of a dataset as a bank file");
  c_bank->add_option("--data", bank.data, "Manifest file or dataset directory")->required();
  c_bank->add_option("--out", bank.out, "Bank file (.bin for binary)")->required();
  c_bank->add_option("--dim", bank.dim, "Embedding dimension")->capture_default_str();
  c_bank->add_option("--seed", bank.seed, "Stub embedder seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (c_gen->parsed()) return run_gen_data(gen);
    if (c_pre->parsed()) return run_pretrain(train);
    if (c_abl->parsed()) return run_ablate(train, grid, ablate_probe);
    if (c_probe->parsed()) return run_probe(probe, false);
    if (c_ft->parsed()) return run_probe(probe, true);
    if (c_eval->parsed()) return run_eval(ev);
    if (c_rec->parsed()) return run_reconstruct(rec);
    if (c_bank->parsed()) return run_export_bank(bank);
  } catch (const NumericError& e) {
    std::cerr << "numeric fault: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ParseError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kExitIo;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitUsage;
}
