#include "vmae/run_config.hpp"

#include "vmae/errors.hpp"

#include <yaml-cpp/yaml.h>

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace vmae {

PretrainOptions RunConfig::pretrain_options() const {
  PretrainOptions o;
  o.model = model;
  o.loss = loss;
  o.optim = optim;
  o.warmup_fraction = warmup_fraction;
  o.epochs = epochs;
  o.batch_size = batch_size;
  o.max_steps = max_steps;
  o.seed = seed;
  o.checkpoint_every = checkpoint_every;
  o.keep_checkpoints = keep_checkpoints;
  return o;
}

ModelConfig preset_model_config(const std::string& name) {
  if (name == "desk") return desk_model_config();
  if (name == "full") return full_model_config();
  if (name == "tiny") return tiny_model_config();
  throw ConfigError("unknown model preset '" + name + "' (expected desk, full or tiny)");
}

namespace {

std::string where(const std::string& source, const YAML::Node& node) {
  const auto mark = node.Mark();
  if (mark.line < 0) return source;
  return source + ":" + std::to_string(mark.line + 1);
}

class MapReader {
 public:
  MapReader(YAML::Node node, std::string prefix, const std::string& source)
      : node_(std::move(node)), prefix_(std::move(prefix)), source_(source) {
    if (node_ && !node_.IsNull() && !node_.IsMap())
      throw ConfigError(where(source_, node_) + ": '" + display(prefix_) + "' must be a mapping");
  }

  YAML::Node child(const char* key) {
    known_.insert(key);
    if (!node_ || node_.IsNull()) return YAML::Node(YAML::NodeType::Undefined);
    const YAML::Node& view = node_;
    return view[key];
  }

  template <typename T>
  void read(const char* key, T& out) {
    YAML::Node n = child(key);
    if (!n) return;
    try {
      out = n.as<T>();
    } catch (const YAML::Exception&) {
      throw ConfigError(where(source_, n) + ": bad value for '" + dotted(key) + "'");
    }
  }

  void read_path(const char* key, std::filesystem::path& out) {
    std::string s;
    read(key, s);
    if (!s.empty()) out = s;
  }

  MapReader section(const char* key) { return MapReader(child(key), dotted(key), source_); }

  void finish() const {
    if (!node_ || node_.IsNull()) return;
    for (const auto& kv : node_) {
      const std::string key = kv.first.as<std::string>();
      if (!known_.count(key)) throw ConfigError(where(source_, kv.first) + ": unknown key '" + dotted(key) + "'");
    }
  }

 private:
  std::string dotted(const std::string& key) const { return prefix_.empty() ? key : prefix_ + "." + key; }
  static std::string display(const std::string& p) { return p.empty() ? "<root>" : p; }

  YAML::Node node_;
  std::string prefix_;
  const std::string& source_;
  std::set<std::string> known_;
};

}  // namespace

RunConfig parse_run_config(const std::string& text, const std::string& source) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError(source + ":" + std::to_string(e.mark.line + 1) + ": " + e.msg);
  }
  RunConfig c;
  MapReader top(root, "", source);
  top.read("seed", c.seed);

  MapReader model = top.section("model");
  model.read("preset", c.preset);
  c.model = preset_model_config(c.preset);
  model.read("image_size", c.model.image_size);
  model.read("patch_size", c.model.patch_size);
  model.read("d_enc", c.model.d_enc);
  model.read("d_dec", c.model.d_dec);
  model.read("enc_depth", c.model.enc_depth);
  model.read("dec_depth", c.model.dec_depth);
  model.read("n_heads_enc", c.model.n_heads_enc);
  model.read("n_heads_dec", c.model.n_heads_dec);
  model.read("mlp_ratio", c.model.mlp_ratio);
  model.read("mask_ratio", c.model.mask_ratio);
  model.read("distill_dim", c.model.distill_dim);
  model.read("sem_dim", c.model.sem_dim);
  model.read("temperature", c.model.temperature);
  model.read("distill_temp", c.model.distill_temp);
  model.read("normalize_mim", c.model.normalize_mim);
  model.read("stop_teacher_grad", c.model.stop_teacher_grad);
  model.finish();

  MapReader loss = top.section("loss");
  MapReader weights = loss.section("weights");
  weights.read("r", c.loss.weights.r);
  weights.read("mim", c.loss.weights.mim);
  weights.read("cls", c.loss.weights.cls);
  weights.read("cf", c.loss.weights.cf);
  weights.read("cs", c.loss.weights.cs);
  weights.finish();
  MapReader toggles = loss.section("toggles");
  toggles.read("r", c.loss.toggles.r);
  toggles.read("mim", c.loss.toggles.mim);
  toggles.read("cls", c.loss.toggles.cls);
  toggles.read("cf", c.loss.toggles.cf);
  toggles.read("cs", c.loss.toggles.cs);
  toggles.finish();
  loss.finish();

  MapReader optim = top.section("optim");
  optim.read("lr", c.optim.lr);
  optim.read("beta1", c.optim.beta1);
  optim.read("beta2", c.optim.beta2);
  optim.read("eps", c.optim.eps);
  optim.read("weight_decay", c.optim.weight_decay);
  optim.read("grad_clip", c.optim.grad_clip);
  optim.read("warmup_fraction", c.warmup_fraction);
  optim.finish();

  MapReader train = top.section("train");
  train.read("epochs", c.epochs);
  train.read("batch_size", c.batch_size);
  train.read("max_steps", c.max_steps);
  train.read("checkpoint_every", c.checkpoint_every);
  train.read("keep_checkpoints", c.keep_checkpoints);
  train.finish();

  MapReader data = top.section("data");
  data.read_path("manifest", c.data);
  data.finish();

  MapReader emb = top.section("embedder");
  std::string kind = "stub";
  emb.read("kind", kind);
  if (kind == "stub") {
    c.embedder.kind = EmbedderKind::stub;
  } else if (kind == "file_bank") {
    c.embedder.kind = EmbedderKind::file_bank;
  } else {
    throw ConfigError(source + ": embedder.kind must be stub or file_bank, got '" + kind + "'");
  }
  emb.read_path("bank", c.embedder.bank);
  emb.read("seed", c.embedder.seed);
  emb.finish();
  top.finish();

  if (c.embedder.kind == EmbedderKind::file_bank && c.embedder.bank.empty())
    throw ConfigError(source + ": embedder.kind file_bank needs embedder.bank");
  if (c.epochs < 0) throw ConfigError(source + ": train.epochs must be >= 0");
  if (c.batch_size < 1) throw ConfigError(source + ": train.batch_size must be >= 1");
  if (c.max_steps < 0) throw ConfigError(source + ": train.max_steps must be >= 0");
  if (c.checkpoint_every < 1) throw ConfigError(source + ": train.checkpoint_every must be >= 1");
  if (!(c.warmup_fraction >= 0.0 && c.warmup_fraction < 1.0))
    throw ConfigError(source + ": optim.warmup_fraction must lie in [0, 1)");
  c.model.validate();
  c.loss.weights.validate();
  c.optim.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path.string());
}

std::string dump_run_config(const RunConfig& c) {
  YAML::Emitter e;
  e.SetDoublePrecision(17);
  e << YAML::BeginMap;
  e << YAML::Key << "seed" << YAML::Value << c.seed;
  e << YAML::Key << "model" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "preset" << YAML::Value << c.preset;
  e << YAML::Key << "image_size" << YAML::Value << c.model.image_size;
  e << YAML::Key << "patch_size" << YAML::Value << c.model.patch_size;
  e << YAML::Key << "d_enc" << YAML::Value << c.model.d_enc;
  e << YAML::Key << "d_dec" << YAML::Value << c.model.d_dec;
  e << YAML::Key << "enc_depth" << YAML::Value << c.model.enc_depth;
  e << YAML::Key << "dec_depth" << YAML::Value << c.model.dec_depth;
  e << YAML::Key << "n_heads_enc" << YAML::Value << c.model.n_heads_enc;
  e << YAML::Key << "n_heads_dec" << YAML::Value << c.model.n_heads_dec;
  e << YAML::Key << "mlp_ratio" << YAML::Value << c.model.mlp_ratio;
  e << YAML::Key << "mask_ratio" << YAML::Value << c.model.mask_ratio;
  e << YAML::Key << "distill_dim" << YAML::Value << c.model.distill_dim;
  e << YAML::Key << "sem_dim" << YAML::Value << c.model.sem_dim;
  e << YAML::Key << "temperature" << YAML::Value << c.model.temperature;
  e << YAML::Key << "distill_temp" << YAML::Value << c.model.distill_temp;
  e << YAML::Key << "normalize_mim" << YAML::Value << c.model.normalize_mim;
  e << YAML::Key << "stop_teacher_grad" << YAML::Value << c.model.stop_teacher_grad;
  e << YAML::EndMap;
  e << YAML::Key << "loss" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "weights" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "r" << YAML::Value << c.loss.weights.r;
  e << YAML::Key << "mim" << YAML::Value << c.loss.weights.mim;
  e << YAML::Key << "cls" << YAML::Value << c.loss.weights.cls;
  e << YAML::Key << "cf" << YAML::Value << c.loss.weights.cf;
  e << YAML::Key << "cs" << YAML::Value << c.loss.weights.cs;
  e << YAML::EndMap;
  e << YAML::Key << "toggles" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "r" << YAML::Value << c.loss.toggles.r;
  e << YAML::Key << "mim" << YAML::Value << c.loss.toggles.mim;
  e << YAML::Key << "cls" << YAML::Value << c.loss.toggles.cls;
  e << YAML::Key << "cf" << YAML::Value << c.loss.toggles.cf;
  e << YAML::Key << "cs" << YAML::Value << c.loss.toggles.cs;
  e << YAML::EndMap << YAML::EndMap;
  e << YAML::Key << "optim" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "lr" << YAML::Value << c.optim.lr;
  e << YAML::Key << "beta1" << YAML::Value << c.optim.beta1;
  e << YAML::Key << "beta2" << YAML::Value << c.optim.beta2;
  e << YAML::Key << "eps" << YAML::Value << c.optim.eps;
  e << YAML::Key << "weight_decay" << YAML::Value << c.optim.weight_decay;
  e << YAML::Key << "grad_clip" << YAML::Value << c.optim.grad_clip;
  e << YAML::Key << "warmup_fraction" << YAML::Value << c.warmup_fraction;
  e << YAML::EndMap;
  e << YAML::Key << "train" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "epochs" << YAML::Value << c.epochs;
  e << YAML::Key << "batch_size" << YAML::Value << c.batch_size;
  e << YAML::Key << "max_steps" << YAML::Value << c.max_steps;
  e << YAML::Key << "checkpoint_every" << YAML::Value << c.checkpoint_every;
  e << YAML::Key << "keep_checkpoints" << YAML::Value << c.keep_checkpoints;
  e << YAML::EndMap;
  e << YAML::Key << "data" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "manifest" << YAML::Value << c.data.string();
  e << YAML::EndMap;
  e << YAML::Key << "embedder" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "kind" << YAML::Value << (c.embedder.kind == EmbedderKind::stub ? "stub" : "file_bank");
  e << YAML::Key << "bank" << YAML::Value << c.embedder.bank.string();
  e << YAML::Key << "seed" << YAML::Value << c.embedder.seed;
  e << YAML::EndMap;
  e << YAML::EndMap;
  return std::string(e.c_str()) + "\n";
}

std::optional<std::uint64_t> seed_from_env() {
  const char* raw = std::getenv("VMAE_SEED");
  if (raw == nullptr || *raw == '\0') return std::nullopt;
  const std::string s(raw);
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw ConfigError("VMAE_SEED must be a nonnegative integer, got '" + s + "'");
  return v;
}

void apply_seed_override(RunConfig& config) {
  if (auto s = seed_from_env()) config.seed = *s;
}

}  // namespace vmae
