#pragma once

#include "vmae/autodiff.hpp"
#include "vmae/image.hpp"
#include "vmae/tokenizer.hpp"

namespace vmae {

// Built-in sketch extractor: grayscale, 3x3 Sobel gradients (replicated
// border), magnitude, divided by the image maximum. A flat image yields an
// all-zero map.
SketchMap extract_edges(const ImageTensor& image);

// Projection heads mapping features to K-way distributions. Teacher heads
// read sketch-branch features (d_enc), student heads read decoder features
// (d_dec).
struct DistillHeads {
  Matrix teacher;      // theta'     [d_enc, K]
  Matrix student;      // theta      [d_dec, K]
  Matrix teacher_cls;  // theta'_cls [d_enc, K]
  Matrix student_cls;  // theta_cls  [d_dec, K]
  double temperature = 1.0;
};

struct DistillOptions {
  double temperature = 1.0;
  bool normalize_by_masked = true;
  bool stop_teacher_grad = false;
};

// Cross-entropy between softmax(teacher logits) and softmax(student logits),
// summed over masked patches (optionally divided by their count). Rows of
// sketch_tokens and dec_tokens are aligned: row 1 + i is patch i.
double patch_distill_loss(const Matrix& sketch_tokens, const Matrix& dec_tokens,
                          const MaskPlan& mask, const DistillHeads& heads,
                          bool normalize_by_masked = true);
double cls_distill_loss(const RowVector& sketch_cls, const RowVector& dec_cls,
                        const DistillHeads& heads);

namespace graph {

// -sum_k softmax(t)_k * log softmax(s)_k summed over rows.
ad::Var soft_cross_entropy(const ad::Var& teacher_logits, const ad::Var& student_logits,
                           bool stop_teacher_grad);

ad::Var patch_distill_loss(const ad::Var& sketch_tokens, const ad::Var& dec_tokens,
                           const MaskPlan& mask, const ad::Var& teacher_w,
                           const ad::Var& student_w, const DistillOptions& options);
// Uses row 0 of both token matrices.
ad::Var cls_distill_loss(const ad::Var& sketch_tokens, const ad::Var& dec_tokens,
                         const ad::Var& teacher_w, const ad::Var& student_w,
                         const DistillOptions& options);

}  // namespace graph
}  // namespace vmae
