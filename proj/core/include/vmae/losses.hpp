#pragma once

#include "vmae/autodiff.hpp"
#include "vmae/dataio.hpp"
#include "vmae/params.hpp"
#include "vmae/semantic_prior.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace vmae {

// Tradeoff weights of the five pre-training losses.
struct LossWeights {
  double r = 4.0;
  double mim = 0.02;
  double cls = 0.02;
  double cf = 2.0;
  double cs = 0.1;

  void validate() const;
  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

struct LossToggles {
  bool r = true;
  bool mim = true;
  bool cls = true;
  bool cf = true;
  bool cs = true;

  friend bool operator==(const LossToggles&, const LossToggles&) = default;
};

// Raw loss components, the effective weights (0 for disabled losses) and
// their weighted sum.
struct LossBreakdown {
  double l_r = 0.0;
  double l_mim = 0.0;
  double l_cls = 0.0;
  double l_cf = 0.0;
  double l_cs = 0.0;
  LossWeights weights;
  double total = 0.0;
  int n_captioned = 0;
  bool empty_mask = false;  // no masked pixels: l_r reported as 0

  bool all_finite() const;
  friend bool operator==(const LossBreakdown&, const LossBreakdown&) = default;
};

LossWeights effective_weights(const LossWeights& weights, const LossToggles& toggles);
// Weighted sum in a fixed order; used for every reported total.
double weighted_total(const LossBreakdown& components, const LossWeights& weights);

// Mean squared error over masked pixel values. `n_masked` counts scalar
// channel values and must equal targets.size(). Zero masked values give 0
// and raise *empty_mask when provided.
double reconstruction_loss(const Matrix& targets, const Matrix& predictions, Index n_masked,
                           bool* empty_mask = nullptr);

namespace graph {
ad::Var reconstruction_loss(const ad::Var& predictions, const Matrix& targets);
}

struct LossSample {
  const ImageTensor* image = nullptr;
  const ImageTensor* sketch = nullptr;  // single-channel map
  const std::string* caption = nullptr;
  std::string id;
  std::vector<std::string> tags;
};

struct LossBatch {
  std::vector<LossSample> items;
  // Mask plan of item j is sample_mask(N, ratio, mix_seed(mask_seed, j)).
  std::uint64_t mask_seed = 0;
};

LossBatch to_loss_batch(const DataBatch& batch, std::uint64_t mask_seed);
LossBatch to_loss_batch(const std::vector<const Sample*>& samples, std::uint64_t mask_seed);

struct LossOptions {
  LossWeights weights;
  LossToggles toggles;
};

struct LossEvaluation {
  LossBreakdown breakdown;
  Gradients gradients;  // empty unless requested
};

// Runs tokenizer, encoder, decoder and both priors over the batch.
// Reconstruction and distillation losses are batch means; the semantic
// losses are means over captioned items (0 when there are none), and the
// consistency loss compares against the distinct captions of the batch
// (0 when fewer than two).
LossEvaluation evaluate_loss(const LossBatch& batch, const ModelParams& params,
                             const LossOptions& options, const FrozenEmbedder& embedder,
                             bool with_gradients);

inline LossBreakdown total_loss(const LossBatch& batch, const ModelParams& params,
                                const LossOptions& options, const FrozenEmbedder& embedder) {
  return evaluate_loss(batch, params, options, embedder, false).breakdown;
}

}  // namespace vmae
