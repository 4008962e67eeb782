#pragma once

#include "vmae/autodiff.hpp"
#include "vmae/config.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace vmae {

struct NamedTensor {
  std::string name;
  Matrix value;
};

struct TensorShape {
  std::string name;
  Index rows = 0;
  Index cols = 0;
};

// Name and shape of every tensor, in creation order; validates the config.
std::vector<TensorShape> param_shapes(const ModelConfig& config);

// All learnable tensors of the model, in a fixed creation order. Shapes are
// derived from the ModelConfig alone.
class ModelParams {
 public:
  ModelParams() = default;
  // Zero-filled tensors with the shapes implied by config.
  explicit ModelParams(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  const std::vector<NamedTensor>& tensors() const { return tensors_; }
  std::vector<NamedTensor>& tensors() { return tensors_; }

  bool contains(std::string_view name) const;
  const Matrix& at(std::string_view name) const;
  Matrix& at(std::string_view name);
  std::size_t index_of(std::string_view name) const;

  std::size_t scalar_count() const;
  bool all_finite() const;

 private:
  void add(std::string name, Index rows, Index cols);

  ModelConfig config_;
  std::vector<NamedTensor> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Weights ~ N(0, 0.02^2) truncated at two standard deviations, biases 0,
// layer-norm scales 1. Deterministic per seed.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

// Per-tensor gradients aligned with ModelParams::tensors().
using Gradients = std::vector<Matrix>;

// Binds every parameter tensor to one autodiff leaf for the lifetime of a
// forward pass. Repeated lookups of a name return the same leaf, so a tensor
// used by several branches (the shared encoder) accumulates one gradient.
class ParamGraph {
 public:
  ParamGraph(const ModelParams& params, bool track_gradients);

  const ModelParams& params() const { return params_; }
  const ModelConfig& config() const { return params_.config(); }
  ad::Var operator[](std::string_view name);

  // Gradient per tensor; zero for tensors that were never touched.
  Gradients gradients() const;

 private:
  const ModelParams& params_;
  bool track_;
  std::vector<ad::Var> vars_;
};

// Tensor names, shared by the builder, the forward passes and the tests.
namespace pname {
std::string enc_block(int block, std::string_view leaf);
std::string dec_block(int block, std::string_view leaf);
}  // namespace pname

}  // namespace vmae
