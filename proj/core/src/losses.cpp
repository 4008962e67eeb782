#include "vmae/losses.hpp"

#include "vmae/backbone.hpp"
#include "vmae/errors.hpp"
#include "vmae/random.hpp"
#include "vmae/structural_prior.hpp"
#include "vmae/tokenizer.hpp"

#include <cmath>
#include <map>

namespace vmae {

void LossWeights::validate() const {
  for (double w : {r, mim, cls, cf, cs}) {
    if (!std::isfinite(w) || w < 0.0) throw ConfigError("loss weights must be finite and non-negative");
  }
}

bool LossBreakdown::all_finite() const {
  for (double v : {l_r, l_mim, l_cls, l_cf, l_cs, total}) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

LossWeights effective_weights(const LossWeights& w, const LossToggles& t) {
  return {t.r ? w.r : 0.0, t.mim ? w.mim : 0.0, t.cls ? w.cls : 0.0, t.cf ? w.cf : 0.0,
          t.cs ? w.cs : 0.0};
}

double weighted_total(const LossBreakdown& c, const LossWeights& w) {
  return w.r * c.l_r + w.mim * c.l_mim + w.cls * c.l_cls + w.cf * c.l_cf + w.cs * c.l_cs;
}

double reconstruction_loss(const Matrix& targets, const Matrix& predictions, Index n_masked,
                           bool* empty_mask) {
  if (targets.rows() != predictions.rows() || targets.cols() != predictions.cols()) {
    throw StructuralError("reconstruction_loss: targets and predictions differ in shape");
  }
  if (n_masked != targets.size()) {
    throw StructuralError("reconstruction_loss: N_m does not match the number of masked values");
  }
  if (empty_mask) *empty_mask = n_masked == 0;
  if (n_masked == 0) return 0.0;
  return (targets - predictions).squaredNorm() / static_cast<double>(n_masked);
}

namespace graph {
ad::Var reconstruction_loss(const ad::Var& predictions, const Matrix& targets) {
  if (targets.size() == 0) return ad::constant_scalar(0.0);
  return ad::mean(ad::square(ad::sub(predictions, ad::constant(targets))));
}
}  // namespace graph

LossBatch to_loss_batch(const std::vector<const Sample*>& samples, std::uint64_t mask_seed) {
  LossBatch batch;
  batch.mask_seed = mask_seed;
  for (const Sample* s : samples) {
    LossSample item;
    item.image = &s->image;
    item.sketch = &s->sketch.map;
    item.caption = s->caption ? &*s->caption : nullptr;
    item.id = s->id;
    item.tags = s->tags;
    batch.items.push_back(std::move(item));
  }
  return batch;
}

LossBatch to_loss_batch(const DataBatch& batch, std::uint64_t mask_seed) {
  return to_loss_batch(batch.samples, mask_seed);
}

LossEvaluation evaluate_loss(const LossBatch& batch, const ModelParams& params,
                             const LossOptions& options, const FrozenEmbedder& embedder,
                             bool with_gradients) {
  if (batch.items.empty()) throw InputError("loss over an empty batch");
  const ModelConfig& cfg = params.config();
  if (embedder.dim() != cfg.sem_dim) {
    throw StructuralError("embedder dimension " + std::to_string(embedder.dim()) +
                          " differs from sem_dim " + std::to_string(cfg.sem_dim));
  }
  options.weights.validate();
  ParamGraph g(params, with_gradients);
  const DistillOptions distill{cfg.distill_temp, cfg.normalize_mim, cfg.stop_teacher_grad};

  std::vector<ad::Var> rec, mim, cls, cf;
  struct Captioned {
    ad::Var f_unit;
    RowVector vc_unit;
  };
  std::vector<Captioned> captioned;
  std::vector<std::string> caption_set;
  std::map<std::string, int> caption_row;
  bool any_empty = false;

  for (std::size_t j = 0; j < batch.items.size(); ++j) {
    const LossSample& item = batch.items[j];
    if (item.image == nullptr || item.sketch == nullptr) throw InputError("batch item without image or sketch");
    const PatchSequence patches = patchify(*item.image, cfg.patch_size);
    if (patches.count() != cfg.n_patches() || patches.channels != cfg.channels) {
      throw StructuralError("image of size " + std::to_string(item.image->height()) + "x" +
                            std::to_string(item.image->width()) + " does not match the model grid");
    }
    const MaskPlan mask = sample_mask(patches.count(), cfg.mask_ratio, mix_seed(batch.mask_seed, j));

    ad::Var enc = graph::encoder(g, graph::embed_image_tokens(g, patches, mask));
    const auto dec = graph::decoder(g, enc, mask);

    Matrix targets(mask.n_masked(), patches.patches.cols());
    for (int m = 0; m < mask.n_masked(); ++m) targets.row(m) = patches.patches.row(mask.masked_idx[m]);
    if (mask.n_masked() == 0) {
      any_empty = true;
      rec.push_back(ad::constant_scalar(0.0));
    } else {
      rec.push_back(graph::reconstruction_loss(dec.pixel_pred, targets));
    }

    const PatchSequence sketch_patches = patchify(*item.sketch, cfg.patch_size);
    ad::Var fs = graph::encoder(g, graph::embed_sketch_tokens(g, sketch_patches));
    mim.push_back(graph::patch_distill_loss(fs, dec.tokens, mask, g["distill.teacher.w"],
                                            g["distill.student.w"], distill));
    cls.push_back(graph::cls_distill_loss(fs, dec.tokens, g["distill.teacher_cls.w"],
                                          g["distill.student_cls.w"], distill));

    if (item.caption != nullptr) {
      const RowVector vc = embedder.embed_image({item.image, item.id, item.tags});
      const std::vector<int> cls_row{0};
      ad::Var f_global = ad::gather_rows(dec.tokens, cls_row);
      cf.push_back(graph::feature_align_loss(f_global, vc, g["sem_head.w"]));
      const double vn = vc.norm();
      if (!(vn > 0.0)) throw NumericError("frozen image embedding has zero norm");
      captioned.push_back({ad::l2_normalize_rows(ad::matmul(f_global, g["sem_head.w"])), vc / vn});
      if (caption_row.emplace(*item.caption, static_cast<int>(caption_set.size())).second) {
        caption_set.push_back(*item.caption);
      }
    }
  }

  auto batch_mean = [](const std::vector<ad::Var>& terms) {
    ad::Var acc = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) acc = ad::add(acc, terms[i]);
    return ad::scale(acc, 1.0 / static_cast<double>(terms.size()));
  };

  ad::Var l_r = batch_mean(rec);
  ad::Var l_mim = batch_mean(mim);
  ad::Var l_cls = batch_mean(cls);
  ad::Var l_cf = cf.empty() ? ad::constant_scalar(0.0) : batch_mean(cf);
  ad::Var l_cs = ad::constant_scalar(0.0);
  if (caption_set.size() >= 2) {
    Matrix W(static_cast<Index>(caption_set.size()), cfg.sem_dim);
    for (std::size_t k = 0; k < caption_set.size(); ++k) {
      W.row(static_cast<Index>(k)) = embedder.embed_text(caption_set[k]);
    }
    std::vector<ad::Var> cs;
    for (const auto& c : captioned) {
      cs.push_back(graph::consistency_loss(c.f_unit, W, c.vc_unit, cfg.temperature).total);
    }
    l_cs = batch_mean(cs);
  }

  LossEvaluation out;
  LossBreakdown& b = out.breakdown;
  b.l_r = l_r.scalar();
  b.l_mim = l_mim.scalar();
  b.l_cls = l_cls.scalar();
  b.l_cf = l_cf.scalar();
  b.l_cs = l_cs.scalar();
  b.weights = effective_weights(options.weights, options.toggles);
  b.total = weighted_total(b, b.weights);
  b.n_captioned = static_cast<int>(captioned.size());
  b.empty_mask = any_empty;

  if (with_gradients) {
    const LossWeights& w = b.weights;
    ad::Var total = ad::scale(l_r, w.r);
    total = ad::add(total, ad::scale(l_mim, w.mim));
    total = ad::add(total, ad::scale(l_cls, w.cls));
    total = ad::add(total, ad::scale(l_cf, w.cf));
    total = ad::add(total, ad::scale(l_cs, w.cs));
    ad::backward(total);
    out.gradients = g.gradients();
  }
  return out;
}

}  // namespace vmae
