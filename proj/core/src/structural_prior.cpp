#include "vmae/structural_prior.hpp"

#include "vmae/backbone.hpp"
#include "vmae/errors.hpp"

#include <algorithm>
#include <cmath>

namespace vmae {

SketchMap extract_edges(const ImageTensor& image) {
  const ImageTensor gray = to_grayscale(image);
  const int h = gray.height();
  const int w = gray.width();
  auto px = [&](int r, int c) {
    return gray.at(std::clamp(r, 0, h - 1), std::clamp(c, 0, w - 1), 0);
  };
  ImageTensor mag(h, w, 1);
  double peak = 0.0;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const double gx = (px(r - 1, c + 1) + 2.0 * px(r, c + 1) + px(r + 1, c + 1)) -
                        (px(r - 1, c - 1) + 2.0 * px(r, c - 1) + px(r + 1, c - 1));
      const double gy = (px(r + 1, c - 1) + 2.0 * px(r + 1, c) + px(r + 1, c + 1)) -
                        (px(r - 1, c - 1) + 2.0 * px(r - 1, c) + px(r - 1, c + 1));
      const double m = std::sqrt(gx * gx + gy * gy);
      mag.at(r, c, 0) = m;
      peak = std::max(peak, m);
    }
  }
  if (peak > 0.0) {
    for (double& v : mag.data()) v = std::min(v / peak, 1.0);
  }
  return {std::move(mag), SketchSource::builtin_gradient};
}

namespace graph {

ad::Var soft_cross_entropy(const ad::Var& teacher_logits, const ad::Var& student_logits,
                           bool stop_teacher_grad) {
  ad::Var t = stop_teacher_grad ? ad::detach(teacher_logits) : teacher_logits;
  ad::Var p = ad::softmax_rows(t);
  ad::Var log_q = ad::log_softmax_rows(student_logits);
  return ad::scale(ad::sum(ad::mul(p, log_q)), -1.0);
}

ad::Var patch_distill_loss(const ad::Var& sketch_tokens, const ad::Var& dec_tokens,
                           const MaskPlan& mask, const ad::Var& teacher_w,
                           const ad::Var& student_w, const DistillOptions& options) {
  const Index expected = mask.n_tokens + 1;
  if (sketch_tokens.rows() != expected || dec_tokens.rows() != expected) {
    throw StructuralError("distillation inputs are not aligned with the mask grid (expected " +
                          std::to_string(expected) + " rows, got " +
                          std::to_string(sketch_tokens.rows()) + " and " +
                          std::to_string(dec_tokens.rows()) + ")");
  }
  if (mask.n_masked() == 0) return ad::constant_scalar(0.0);
  const auto rows = token_rows(mask.masked_idx);
  const double inv_t = 1.0 / options.temperature;
  ad::Var t_logits = ad::scale(ad::matmul(ad::gather_rows(sketch_tokens, rows), teacher_w), inv_t);
  ad::Var s_logits = ad::scale(ad::matmul(ad::gather_rows(dec_tokens, rows), student_w), inv_t);
  ad::Var loss = soft_cross_entropy(t_logits, s_logits, options.stop_teacher_grad);
  if (options.normalize_by_masked) loss = ad::scale(loss, 1.0 / mask.n_masked());
  return loss;
}

ad::Var cls_distill_loss(const ad::Var& sketch_tokens, const ad::Var& dec_tokens,
                         const ad::Var& teacher_w, const ad::Var& student_w,
                         const DistillOptions& options) {
  const std::vector<int> cls{0};
  const double inv_t = 1.0 / options.temperature;
  ad::Var t_logits = ad::scale(ad::matmul(ad::gather_rows(sketch_tokens, cls), teacher_w), inv_t);
  ad::Var s_logits = ad::scale(ad::matmul(ad::gather_rows(dec_tokens, cls), student_w), inv_t);
  return soft_cross_entropy(t_logits, s_logits, options.stop_teacher_grad);
}

}  // namespace graph

double patch_distill_loss(const Matrix& sketch_tokens, const Matrix& dec_tokens,
                          const MaskPlan& mask, const DistillHeads& heads,
                          bool normalize_by_masked) {
  DistillOptions opts{heads.temperature, normalize_by_masked, false};
  return graph::patch_distill_loss(ad::constant(sketch_tokens), ad::constant(dec_tokens), mask,
                                   ad::constant(heads.teacher), ad::constant(heads.student), opts)
      .scalar();
}

double cls_distill_loss(const RowVector& sketch_cls, const RowVector& dec_cls,
                        const DistillHeads& heads) {
  DistillOptions opts{heads.temperature, false, false};
  return graph::cls_distill_loss(ad::constant(Matrix(sketch_cls)), ad::constant(Matrix(dec_cls)),
                                 ad::constant(heads.teacher_cls), ad::constant(heads.student_cls),
                                 opts)
      .scalar();
}

}  // namespace vmae
