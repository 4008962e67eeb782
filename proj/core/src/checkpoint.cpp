#include "vmae/checkpoint.hpp"

#include "vmae/errors.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace vmae {

namespace fs = std::filesystem;

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr std::string_view kMagic = "VMAE1";
using Kind = CheckpointLoadError::Kind;

std::string fmt_double(double v) {
  char buf[40];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  return std::string(buf, end);
}

std::vector<std::pair<std::string, std::string>> config_fields(const ModelConfig& c) {
  return {{"image_size", std::to_string(c.image_size)},
          {"patch_size", std::to_string(c.patch_size)},
          {"channels", std::to_string(c.channels)},
          {"d_enc", std::to_string(c.d_enc)},
          {"d_dec", std::to_string(c.d_dec)},
          {"enc_depth", std::to_string(c.enc_depth)},
          {"dec_depth", std::to_string(c.dec_depth)},
          {"n_heads_enc", std::to_string(c.n_heads_enc)},
          {"n_heads_dec", std::to_string(c.n_heads_dec)},
          {"mlp_ratio", fmt_double(c.mlp_ratio)},
          {"mask_ratio", fmt_double(c.mask_ratio)},
          {"distill_dim", std::to_string(c.distill_dim)},
          {"sem_dim", std::to_string(c.sem_dim)},
          {"temperature", fmt_double(c.temperature)},
          {"distill_temp", fmt_double(c.distill_temp)},
          {"normalize_mim", c.normalize_mim ? "1" : "0"},
          {"stop_teacher_grad", c.stop_teacher_grad ? "1" : "0"}};
}

[[noreturn]] void malformed(const std::string& what) {
  throw CheckpointLoadError(Kind::malformed, "checkpoint: " + what);
}

long long to_ll(const std::string& s, const std::string& field) {
  long long v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) malformed("bad integer for " + field + ": '" + s + "'");
  return v;
}

double to_double(const std::string& s, const std::string& field) {
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) malformed("bad number for " + field + ": '" + s + "'");
  return v;
}

ModelConfig config_from_fields(const std::map<std::string, std::string>& f) {
  auto get = [&](const char* key) -> const std::string& {
    auto it = f.find(key);
    if (it == f.end()) malformed(std::string("missing config field ") + key);
    return it->second;
  };
  auto get_int = [&](const char* key) { return static_cast<int>(to_ll(get(key), key)); };
  ModelConfig c;
  c.image_size = get_int("image_size");
  c.patch_size = get_int("patch_size");
  c.channels = get_int("channels");
  c.d_enc = get_int("d_enc");
  c.d_dec = get_int("d_dec");
  c.enc_depth = get_int("enc_depth");
  c.dec_depth = get_int("dec_depth");
  c.n_heads_enc = get_int("n_heads_enc");
  c.n_heads_dec = get_int("n_heads_dec");
  c.mlp_ratio = to_double(get("mlp_ratio"), "mlp_ratio");
  c.mask_ratio = to_double(get("mask_ratio"), "mask_ratio");
  c.distill_dim = get_int("distill_dim");
  c.sem_dim = get_int("sem_dim");
  c.temperature = to_double(get("temperature"), "temperature");
  c.distill_temp = to_double(get("distill_temp"), "distill_temp");
  c.normalize_mim = get_int("normalize_mim") != 0;
  c.stop_teacher_grad = get_int("stop_teacher_grad") != 0;
  return c;
}

struct TensorEntry {
  std::string name;
  std::string dtype;
  Index rows = 0;
  Index cols = 0;
  std::uint64_t offset = 0;
};

}  // namespace

void save_checkpoint(const TrainState& state, const fs::path& path) {
  const auto& tensors = state.params.tensors();
  if (state.optimizer.m.size() != tensors.size() || state.optimizer.v.size() != tensors.size()) {
    throw StructuralError("checkpoint: optimizer moments do not match the parameter list");
  }
  std::vector<const Matrix*> payload;
  std::ostringstream index;
  index << "meta step " << state.step << '\n'
        << "meta epoch " << state.epoch << '\n'
        << "meta faults " << state.faults << '\n'
        << "meta seed " << state.seed << '\n'
        << "meta adam_updates " << state.optimizer.updates << '\n';
  for (const auto& [k, v] : config_fields(state.params.config())) index << "config " << k << ' ' << v << '\n';
  std::uint64_t offset = 0;
  auto add = [&](const std::string& name, const Matrix& m) {
    index << "tensor " << name << " f64 " << m.rows() << ' ' << m.cols() << ' ' << offset << '\n';
    offset += static_cast<std::uint64_t>(m.size()) * sizeof(double);
    payload.push_back(&m);
  };
  for (std::size_t i = 0; i < tensors.size(); ++i) add("param/" + tensors[i].name, tensors[i].value);
  for (std::size_t i = 0; i < tensors.size(); ++i) add("adam_m/" + tensors[i].name, state.optimizer.m[i]);
  for (std::size_t i = 0; i < tensors.size(); ++i) add("adam_v/" + tensors[i].name, state.optimizer.v[i]);
  index << "end\n";
  const std::string index_text = index.str();

  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out << kMagic << '\n' << "version " << kCheckpointVersion << '\n' << "index_bytes " << index_text.size() << '\n';
    out.write(index_text.data(), static_cast<std::streamsize>(index_text.size()));
    for (const Matrix* m : payload) {
      out.write(reinterpret_cast<const char*>(m->data()), static_cast<std::streamsize>(m->size() * sizeof(double)));
    }
    out.flush();
    if (!out) throw IoError("failed writing checkpoint " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

TrainState load_checkpoint(const fs::path& path, const std::optional<ModelConfig>& expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kMagic) {
    throw CheckpointLoadError(Kind::bad_magic, path.string() + ": not a VMAE1 checkpoint");
  }
  if (!std::getline(in, line) || line.rfind("version ", 0) != 0) {
    throw CheckpointLoadError(Kind::malformed, path.string() + ": missing version line");
  }
  const long long version = to_ll(line.substr(8), "version");
  if (version != kCheckpointVersion) {
    throw CheckpointLoadError(Kind::bad_version, path.string() + ": unsupported checkpoint version " +
                                                     std::to_string(version));
  }
  if (!std::getline(in, line) || line.rfind("index_bytes ", 0) != 0) {
    throw CheckpointLoadError(Kind::malformed, path.string() + ": missing index size");
  }
  const auto index_bytes = static_cast<std::size_t>(to_ll(line.substr(12), "index_bytes"));
  std::string index_text(index_bytes, '\0');
  if (!in.read(index_text.data(), static_cast<std::streamsize>(index_bytes))) {
    throw CheckpointLoadError(Kind::truncated, path.string() + ": truncated index");
  }
  const auto data_start = in.tellg();

  std::map<std::string, std::string> meta, cfg;
  std::vector<TensorEntry> entries;
  std::istringstream idx(index_text);
  bool saw_end = false;
  while (std::getline(idx, line)) {
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "end") {
      saw_end = true;
      break;
    }
    if (kind == "meta" || kind == "config") {
      std::string k, v;
      if (!(ls >> k >> v)) malformed("bad index line '" + line + "'");
      (kind == "meta" ? meta : cfg)[k] = v;
    } else if (kind == "tensor") {
      TensorEntry e;
      if (!(ls >> e.name >> e.dtype >> e.rows >> e.cols >> e.offset) || e.rows < 0 || e.cols < 0) {
        malformed("bad tensor line '" + line + "'");
      }
      if (e.dtype != "f64" && e.dtype != "f32") malformed("unsupported dtype '" + e.dtype + "' for " + e.name);
      entries.push_back(std::move(e));
    } else {
      malformed("unknown index line '" + line + "'");
    }
  }
  if (!saw_end) throw CheckpointLoadError(Kind::truncated, path.string() + ": index has no end marker");

  const ModelConfig stored = config_from_fields(cfg);
  const ModelConfig shape_config = expected.value_or(stored);
  TrainState state;
  try {
    state.params = ModelParams(shape_config);
  } catch (const ConfigError& e) {
    malformed(std::string("invalid stored config: ") + e.what());
  }
  state.optimizer = AdamWState::zeros_like(state.params);

  std::map<std::string, const TensorEntry*> by_name;
  for (const auto& e : entries) by_name[e.name] = &e;
  auto read_into = [&](const std::string& name, Matrix& dst) {
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw CheckpointLoadError(Kind::shape_mismatch, path.string() + ": tensor '" + name + "' missing");
    }
    const TensorEntry& e = *it->second;
    if (e.rows != dst.rows() || e.cols != dst.cols()) {
      std::ostringstream os;
      os << path.string() << ": tensor '" << name << "' has shape " << e.rows << "x" << e.cols
         << ", config expects " << dst.rows() << "x" << dst.cols();
      throw CheckpointLoadError(Kind::shape_mismatch, os.str());
    }
    in.seekg(data_start + static_cast<std::streamoff>(e.offset));
    if (e.dtype == "f64") {
      if (!in.read(reinterpret_cast<char*>(dst.data()), static_cast<std::streamsize>(dst.size() * sizeof(double)))) {
        throw CheckpointLoadError(Kind::truncated, path.string() + ": data of '" + name + "' truncated");
      }
    } else {
      std::vector<float> buf(static_cast<std::size_t>(dst.size()));
      if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)))) {
        throw CheckpointLoadError(Kind::truncated, path.string() + ": data of '" + name + "' truncated");
      }
      for (std::size_t i = 0; i < buf.size(); ++i) dst.data()[i] = buf[i];
    }
  };
  auto& tensors = state.params.tensors();
  for (auto& t : tensors) read_into("param/" + t.name, t.value);
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    read_into("adam_m/" + tensors[i].name, state.optimizer.m[i]);
    read_into("adam_v/" + tensors[i].name, state.optimizer.v[i]);
  }
  if (by_name.size() != 3 * tensors.size()) {
    for (const auto& e : entries) {
      const auto slash = e.name.find('/');
      if (slash == std::string::npos || !state.params.contains(e.name.substr(slash + 1))) {
        throw CheckpointLoadError(Kind::shape_mismatch,
                                  path.string() + ": tensor '" + e.name + "' is not part of the config");
      }
    }
  }

  auto meta_ll = [&](const char* key) {
    auto it = meta.find(key);
    if (it == meta.end()) malformed(std::string("missing meta field ") + key);
    return to_ll(it->second, key);
  };
  state.step = static_cast<long>(meta_ll("step"));
  state.epoch = static_cast<int>(meta_ll("epoch"));
  state.faults = static_cast<long>(meta_ll("faults"));
  {
    auto it = meta.find("seed");
    if (it == meta.end()) malformed("missing meta field seed");
    std::uint64_t s = 0;
    auto [p, ec] = std::from_chars(it->second.data(), it->second.data() + it->second.size(), s);
    if (ec != std::errc()) malformed("bad seed");
    state.seed = s;
  }
  state.optimizer.updates = static_cast<long>(meta_ll("adam_updates"));
  return state;
}

}  // namespace vmae
