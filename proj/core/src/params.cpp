#include "vmae/params.hpp"

#include "vmae/errors.hpp"
#include "vmae/random.hpp"

#include <cmath>

namespace vmae {

namespace pname {
std::string enc_block(int block, std::string_view leaf) {
  return "enc." + std::to_string(block) + "." + std::string(leaf);
}
std::string dec_block(int block, std::string_view leaf) {
  return "dec." + std::to_string(block) + "." + std::string(leaf);
}
}  // namespace pname

namespace {

template <typename NameFn>
void add_block(NameFn name, int width, int hidden, auto&& add) {
  add(name("ln1.g"), 1, width);
  add(name("ln1.b"), 1, width);
  add(name("attn.qkv.w"), width, 3 * width);
  add(name("attn.qkv.b"), 1, 3 * width);
  add(name("attn.out.w"), width, width);
  add(name("attn.out.b"), 1, width);
  add(name("ln2.g"), 1, width);
  add(name("ln2.b"), 1, width);
  add(name("mlp.fc1.w"), width, hidden);
  add(name("mlp.fc1.b"), 1, hidden);
  add(name("mlp.fc2.w"), hidden, width);
  add(name("mlp.fc2.b"), 1, width);
}

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

}  // namespace

std::vector<TensorShape> param_shapes(const ModelConfig& config) {
  config.validate();
  const int n = config.n_patches();
  const int de = config.d_enc;
  const int dd = config.d_dec;
  std::vector<TensorShape> shapes;
  auto add = [&shapes](std::string name, Index rows, Index cols) { shapes.push_back({std::move(name), rows, cols}); };

  add("patch_proj.w", config.patch_dim(), de);
  add("patch_proj.b", 1, de);
  add("sketch_proj.w", config.sketch_patch_dim(), de);
  add("sketch_proj.b", 1, de);
  add("cls_token", 1, de);
  add("pos_enc", 1 + n, de);
  add("pos_sketch", 1 + n, de);
  for (int b = 0; b < config.enc_depth; ++b) {
    add_block([b](std::string_view leaf) { return pname::enc_block(b, leaf); }, de, config.mlp_hidden(de), add);
  }
  add("dec_embed.w", de, dd);
  add("dec_embed.b", 1, dd);
  add("mask_token", 1, dd);
  add("pos_dec", 1 + n, dd);
  for (int b = 0; b < config.dec_depth; ++b) {
    add_block([b](std::string_view leaf) { return pname::dec_block(b, leaf); }, dd, config.mlp_hidden(dd), add);
  }
  add("pixel_head.w", dd, config.patch_dim());
  add("pixel_head.b", 1, config.patch_dim());
  add("distill.teacher.w", de, config.distill_dim);
  add("distill.student.w", dd, config.distill_dim);
  add("distill.teacher_cls.w", de, config.distill_dim);
  add("distill.student_cls.w", dd, config.distill_dim);
  add("sem_head.w", dd, config.sem_dim);
  return shapes;
}

ModelParams::ModelParams(const ModelConfig& config) : config_(config) {
  for (auto& s : param_shapes(config)) add(std::move(s.name), s.rows, s.cols);
}

void ModelParams::add(std::string name, Index rows, Index cols) {
  index_.emplace(name, tensors_.size());
  tensors_.push_back({std::move(name), Matrix::Zero(rows, cols)});
}

bool ModelParams::contains(std::string_view name) const {
  return index_.find(std::string(name)) != index_.end();
}

std::size_t ModelParams::index_of(std::string_view name) const {
  const auto it = index_.find(std::string(name));
  if (it == index_.end()) throw StructuralError("unknown parameter tensor '" + std::string(name) + "'");
  return it->second;
}

const Matrix& ModelParams::at(std::string_view name) const { return tensors_[index_of(name)].value; }
Matrix& ModelParams::at(std::string_view name) { return tensors_[index_of(name)].value; }

std::size_t ModelParams::scalar_count() const {
  std::size_t total = 0;
  for (const auto& t : tensors_) total += static_cast<std::size_t>(t.value.size());
  return total;
}

bool ModelParams::all_finite() const {
  for (const auto& t : tensors_) {
    if (!t.value.allFinite()) return false;
  }
  return true;
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  ModelParams params(config);
  Rng rng(seed);
  for (auto& t : params.tensors()) {
    if (ends_with(t.name, ".g")) {
      t.value.setOnes();
    } else if (ends_with(t.name, ".b")) {
      t.value.setZero();
    } else {
      for (Index i = 0; i < t.value.size(); ++i) t.value.data()[i] = rng.truncated_normal(0.02);
    }
  }
  return params;
}

ParamGraph::ParamGraph(const ModelParams& params, bool track_gradients)
    : params_(params), track_(track_gradients), vars_(params.tensors().size()) {}

ad::Var ParamGraph::operator[](std::string_view name) {
  const std::size_t i = params_.index_of(name);
  if (!vars_[i].valid()) {
    const Matrix& v = params_.tensors()[i].value;
    vars_[i] = track_ ? ad::leaf(v) : ad::constant(v);
  }
  return vars_[i];
}

Gradients ParamGraph::gradients() const {
  Gradients grads;
  grads.reserve(vars_.size());
  for (std::size_t i = 0; i < vars_.size(); ++i) {
    const Matrix& v = params_.tensors()[i].value;
    if (vars_[i].valid()) {
      grads.push_back(vars_[i].grad());
    } else {
      grads.push_back(Matrix::Zero(v.rows(), v.cols()));
    }
  }
  return grads;
}

}  // namespace vmae
