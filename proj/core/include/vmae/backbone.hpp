#pragma once

#include "vmae/autodiff.hpp"
#include "vmae/params.hpp"
#include "vmae/tokenizer.hpp"

namespace vmae {

// Decoder outputs for one image.
struct FeatureBundle {
  Matrix enc_tokens;  // [n_visible + 1, d_enc]
  Matrix dec_tokens;  // [N + 1, d_dec], row 1 + i is patch i
  RowVector dec_cls;  // [d_dec]
  Matrix pixel_pred;  // [N_masked, patch_dim], rows follow mask.masked_idx
};

// Pre-norm Transformer encoder. Throws NumericError naming the first token
// that holds a non-finite value.
Matrix encode(const TokenEmbeddings& tokens, const ModelParams& params);
FeatureBundle decode(const Matrix& encoded, const MaskPlan& mask, const ModelParams& params);
// Sketch tokens through the same encoder weights; no decoder.
Matrix forward_sketch(const TokenEmbeddings& sketch_tokens, const ModelParams& params);

// Differentiable building blocks. Every function reads parameters through
// the ParamGraph so gradients reach ModelParams.
namespace graph {

ad::Var embed_image_tokens(ParamGraph& g, const PatchSequence& patches, const MaskPlan& mask);
ad::Var embed_sketch_tokens(ParamGraph& g, const PatchSequence& sketch_patches);

// One pre-norm block: x + MSA(LN(x)), then + MLP(LN(.)).
ad::Var transformer_block(ParamGraph& g, const ad::Var& x, const std::string& prefix, int n_heads);
ad::Var encoder(ParamGraph& g, const ad::Var& tokens);

struct DecoderOutput {
  ad::Var tokens;      // [N + 1, d_dec]
  ad::Var pixel_pred;  // [N_masked, patch_dim]; invalid Var when nothing is masked
};
DecoderOutput decoder(ParamGraph& g, const ad::Var& encoded, const MaskPlan& mask);

// Token indices 1 + i for each i in idx.
std::vector<int> token_rows(const std::vector<int>& idx);

}  // namespace graph
}  // namespace vmae
