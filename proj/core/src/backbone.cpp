#include "vmae/backbone.hpp"

#include "vmae/errors.hpp"

#include <cmath>
#include <sstream>

namespace vmae {

namespace graph {

std::vector<int> token_rows(const std::vector<int>& idx) {
  std::vector<int> rows(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) rows[i] = idx[i] + 1;
  return rows;
}

namespace {

ad::Var project_with_cls(ParamGraph& g, const Matrix& rows, const char* weight, const char* bias,
                         const char* pos_table, const std::vector<int>& positions) {
  const auto& cfg = g.config();
  const ad::Var w = g[weight];
  if (rows.cols() != w.rows()) {
    std::ostringstream os;
    os << weight << " expects patches of width " << w.rows() << ", got " << rows.cols();
    throw StructuralError(os.str());
  }
  ad::Var proj = ad::add_row(ad::matmul(ad::constant(rows), w), g[bias]);
  ad::Var tokens = ad::concat_rows(g["cls_token"], proj);
  std::vector<int> pos_rows{0};
  for (int p : positions) {
    if (p < 0 || p >= cfg.n_patches()) throw StructuralError("patch index outside the position table");
    pos_rows.push_back(p + 1);
  }
  return ad::add(tokens, ad::gather_rows(g[pos_table], pos_rows));
}

}  // namespace

ad::Var embed_image_tokens(ParamGraph& g, const PatchSequence& patches, const MaskPlan& mask) {
  if (mask.n_tokens != patches.count()) {
    throw StructuralError("mask plan covers " + std::to_string(mask.n_tokens) + " tokens but " +
                          std::to_string(patches.count()) + " patches were given");
  }
  Matrix visible(mask.n_visible(), patches.patches.cols());
  for (int i = 0; i < mask.n_visible(); ++i) visible.row(i) = patches.patches.row(mask.visible_idx[i]);
  return project_with_cls(g, visible, "patch_proj.w", "patch_proj.b", "pos_enc", mask.visible_idx);
}

ad::Var embed_sketch_tokens(ParamGraph& g, const PatchSequence& sketch_patches) {
  std::vector<int> all(static_cast<std::size_t>(sketch_patches.count()));
  for (int i = 0; i < sketch_patches.count(); ++i) all[static_cast<std::size_t>(i)] = i;
  return project_with_cls(g, sketch_patches.patches, "sketch_proj.w", "sketch_proj.b", "pos_sketch",
                          all);
}

ad::Var transformer_block(ParamGraph& g, const ad::Var& x, const std::string& prefix, int n_heads) {
  auto p = [&](const char* leaf) { return g[prefix + leaf]; };
  const Index width = x.cols();
  const Index head_dim = width / n_heads;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

  ad::Var h = ad::layer_norm(x, p("ln1.g"), p("ln1.b"));
  ad::Var qkv = ad::add_row(ad::matmul(h, p("attn.qkv.w")), p("attn.qkv.b"));
  std::vector<ad::Var> heads;
  heads.reserve(static_cast<std::size_t>(n_heads));
  for (int head = 0; head < n_heads; ++head) {
    ad::Var q = ad::slice_cols(qkv, head * head_dim, head_dim);
    ad::Var k = ad::slice_cols(qkv, width + head * head_dim, head_dim);
    ad::Var v = ad::slice_cols(qkv, 2 * width + head * head_dim, head_dim);
    ad::Var att = ad::softmax_rows(ad::scale(ad::matmul(q, ad::transpose(k)), att_scale));
    heads.push_back(ad::matmul(att, v));
  }
  ad::Var attended = ad::add_row(ad::matmul(ad::concat_cols(heads), p("attn.out.w")), p("attn.out.b"));
  ad::Var x1 = ad::add(x, attended);

  ad::Var h2 = ad::layer_norm(x1, p("ln2.g"), p("ln2.b"));
  ad::Var hidden = ad::gelu(ad::add_row(ad::matmul(h2, p("mlp.fc1.w")), p("mlp.fc1.b")));
  ad::Var mlp = ad::add_row(ad::matmul(hidden, p("mlp.fc2.w")), p("mlp.fc2.b"));
  return ad::add(x1, mlp);
}

ad::Var encoder(ParamGraph& g, const ad::Var& tokens) {
  const auto& cfg = g.config();
  if (tokens.cols() != cfg.d_enc) {
    throw StructuralError("encoder expects tokens of width " + std::to_string(cfg.d_enc) + ", got " +
                          std::to_string(tokens.cols()));
  }
  for (Index r = 0; r < tokens.rows(); ++r) {
    if (!tokens.value().row(r).allFinite()) {
      throw NumericError("non-finite value in input token " + std::to_string(r));
    }
  }
  ad::Var x = tokens;
  for (int b = 0; b < cfg.enc_depth; ++b) {
    x = transformer_block(g, x, "enc." + std::to_string(b) + ".", cfg.n_heads_enc);
  }
  return x;
}

DecoderOutput decoder(ParamGraph& g, const ad::Var& encoded, const MaskPlan& mask) {
  const auto& cfg = g.config();
  const int n = cfg.n_patches();
  if (mask.n_tokens != n) {
    throw StructuralError("mask plan has " + std::to_string(mask.n_tokens) +
                          " tokens, model grid has " + std::to_string(n));
  }
  if (encoded.rows() != mask.n_visible() + 1) {
    throw StructuralError("decoder received " + std::to_string(encoded.rows()) +
                          " tokens for a mask with " + std::to_string(mask.n_visible()) +
                          " visible patches (+CLS)");
  }
  ad::Var projected = ad::add_row(ad::matmul(encoded, g["dec_embed.w"]), g["dec_embed.b"]);
  // Rows 0..n_vis of `pool` are CLS + visible tokens, the last row is the mask token.
  ad::Var pool = ad::concat_rows(projected, g["mask_token"]);
  const int mask_row = mask.n_visible() + 1;
  std::vector<int> order(static_cast<std::size_t>(n + 1), mask_row);
  order[0] = 0;
  for (int v = 0; v < mask.n_visible(); ++v) order[static_cast<std::size_t>(mask.visible_idx[v] + 1)] = v + 1;

  ad::Var x = ad::add(ad::gather_rows(pool, order), g["pos_dec"]);
  for (int b = 0; b < cfg.dec_depth; ++b) {
    x = transformer_block(g, x, "dec." + std::to_string(b) + ".", cfg.n_heads_dec);
  }
  DecoderOutput out{x, {}};
  if (mask.n_masked() > 0) {
    ad::Var masked = ad::gather_rows(x, token_rows(mask.masked_idx));
    out.pixel_pred = ad::add_row(ad::matmul(masked, g["pixel_head.w"]), g["pixel_head.b"]);
  }
  return out;
}

}  // namespace graph

Matrix encode(const TokenEmbeddings& tokens, const ModelParams& params) {
  ParamGraph g(params, false);
  return graph::encoder(g, ad::constant(tokens.tokens)).value();
}

FeatureBundle decode(const Matrix& encoded, const MaskPlan& mask, const ModelParams& params) {
  ParamGraph g(params, false);
  auto out = graph::decoder(g, ad::constant(encoded), mask);
  FeatureBundle bundle;
  bundle.enc_tokens = encoded;
  bundle.dec_tokens = out.tokens.value();
  bundle.dec_cls = bundle.dec_tokens.row(0);
  if (out.pixel_pred.valid()) {
    bundle.pixel_pred = out.pixel_pred.value();
  } else {
    bundle.pixel_pred = Matrix(0, params.config().patch_dim());
  }
  return bundle;
}

Matrix forward_sketch(const TokenEmbeddings& sketch_tokens, const ModelParams& params) {
  if (sketch_tokens.tokens.rows() != params.config().n_patches() + 1) {
    throw StructuralError("sketch branch expects the full token sequence plus CLS");
  }
  return encode(sketch_tokens, params);
}

}  // namespace vmae
