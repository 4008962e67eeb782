#include "test_support.hpp"

#include "vmae/backbone.hpp"
#include "vmae/errors.hpp"
#include "vmae/params.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace vmae;
using vmae::testing::random_image;
using vmae::testing::random_matrix;

namespace {

// Straight-line reference of one pre-norm block, written with explicit loops.
Matrix ref_layer_norm(const Matrix& x, const Matrix& g, const Matrix& b) {
  Matrix y(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    double mu = 0, var = 0;
    for (Index k = 0; k < x.cols(); ++k) mu += x(i, k);
    mu /= x.cols();
    for (Index k = 0; k < x.cols(); ++k) var += (x(i, k) - mu) * (x(i, k) - mu);
    var /= x.cols();
    for (Index k = 0; k < x.cols(); ++k) y(i, k) = (x(i, k) - mu) / std::sqrt(var + 1e-6) * g(0, k) + b(0, k);
  }
  return y;
}

Matrix ref_block(const ModelParams& p, const std::string& pre, const Matrix& x, int heads) {
  const Index n = x.rows(), w = x.cols(), hd = w / heads;
  const Matrix h = ref_layer_norm(x, p.at(pre + "ln1.g"), p.at(pre + "ln1.b"));
  Matrix qkv = h * p.at(pre + "attn.qkv.w");
  for (Index i = 0; i < n; ++i) qkv.row(i) += p.at(pre + "attn.qkv.b");
  Matrix cat(n, w);
  for (int hh = 0; hh < heads; ++hh) {
    for (Index i = 0; i < n; ++i) {
      std::vector<double> s(static_cast<std::size_t>(n));
      double mx = -1e300;
      for (Index j = 0; j < n; ++j) {
        double d = 0;
        for (Index k = 0; k < hd; ++k) d += qkv(i, hh * hd + k) * qkv(j, w + hh * hd + k);
        s[static_cast<std::size_t>(j)] = d / std::sqrt(static_cast<double>(hd));
        mx = std::max(mx, s[static_cast<std::size_t>(j)]);
      }
      double z = 0;
      for (auto& v : s) z += (v = std::exp(v - mx));
      for (Index k = 0; k < hd; ++k) {
        double acc = 0;
        for (Index j = 0; j < n; ++j) acc += s[static_cast<std::size_t>(j)] / z * qkv(j, 2 * w + hh * hd + k);
        cat(i, hh * hd + k) = acc;
      }
    }
  }
  Matrix att = cat * p.at(pre + "attn.out.w");
  for (Index i = 0; i < n; ++i) att.row(i) += p.at(pre + "attn.out.b");
  const Matrix x1 = x + att;
  const Matrix h2 = ref_layer_norm(x1, p.at(pre + "ln2.g"), p.at(pre + "ln2.b"));
  Matrix hid = h2 * p.at(pre + "mlp.fc1.w");
  for (Index i = 0; i < n; ++i) hid.row(i) += p.at(pre + "mlp.fc1.b");
  for (Index i = 0; i < hid.size(); ++i) {
    const double v = hid.data()[i];
    hid.data()[i] = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
  }
  Matrix out = hid * p.at(pre + "mlp.fc2.w");
  for (Index i = 0; i < n; ++i) out.row(i) += p.at(pre + "mlp.fc2.b");
  return x1 + out;
}

ModelParams randomized(const ModelConfig& cfg, std::uint64_t seed, double scale) {
  ModelParams p(cfg);
  Rng rng(seed);
  for (auto& t : p.tensors()) t.value = random_matrix(rng, t.value.rows(), t.value.cols(), scale);
  return p;
}

std::size_t closed_form_count(const ModelConfig& c) {
  const std::size_t n = static_cast<std::size_t>(c.n_patches());
  const std::size_t de = static_cast<std::size_t>(c.d_enc), dd = static_cast<std::size_t>(c.d_dec);
  const std::size_t pd = static_cast<std::size_t>(c.patch_size * c.patch_size * 3);
  const std::size_t sd = static_cast<std::size_t>(c.patch_size * c.patch_size);
  auto block = [&](std::size_t w) {
    const std::size_t hid = static_cast<std::size_t>(std::lround(c.mlp_ratio * static_cast<double>(w)));
    return 4 * w + (w * 3 * w + 3 * w) + (w * w + w) + (w * hid + hid) + (hid * w + w);
  };
  const std::size_t k = static_cast<std::size_t>(c.distill_dim), s = static_cast<std::size_t>(c.sem_dim);
  return (pd * de + de) + (sd * de + de) + de + 2 * (1 + n) * de + static_cast<std::size_t>(c.enc_depth) * block(de) +
         (de * dd + dd) + dd + (1 + n) * dd + static_cast<std::size_t>(c.dec_depth) * block(dd) + (dd * pd + pd) +
         2 * de * k + 2 * dd * k + dd * s;
}

}  // namespace

TEST_CASE("init_params is deterministic per seed") {
  const auto a = init_params(tiny_model_config(), 5);
  const auto b = init_params(tiny_model_config(), 5);
  const auto c = init_params(tiny_model_config(), 6);
  REQUIRE(a.tensors().size() == b.tensors().size());
  bool differs = false;
  for (std::size_t i = 0; i < a.tensors().size(); ++i) {
    CHECK(a.tensors()[i].value == b.tensors()[i].value);
    differs |= a.tensors()[i].value != c.tensors()[i].value;
  }
  CHECK(differs);
}

TEST_CASE("init_params follows the initialization rules") {
  const auto p = init_params(tiny_model_config(), 1);
  for (const auto& t : p.tensors()) {
    const std::string& n = t.name;
    if (n.size() > 2 && n.substr(n.size() - 2) == ".g") {
      CHECK(t.value.isOnes(0.0));
    } else if (n.size() > 2 && n.substr(n.size() - 2) == ".b") {
      CHECK(t.value.isZero(0.0));
    } else {
      CHECK(t.value.cwiseAbs().maxCoeff() <= 0.04);
    }
  }
}

TEST_CASE("tiny parameter count matches the closed-form shape sum") {
  const ModelConfig cfg = tiny_model_config();
  CHECK(init_params(cfg, 0).scalar_count() == closed_form_count(cfg));
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    ModelConfig c = tiny_model_config();
    c.patch_size = 2 << rng.below(3);
    c.image_size = c.patch_size * static_cast<int>(1 + rng.below(4));
    c.n_heads_enc = 1 + static_cast<int>(rng.below(3));
    c.n_heads_dec = 1 + static_cast<int>(rng.below(3));
    c.d_enc = c.n_heads_enc * static_cast<int>(1 + rng.below(6));
    c.d_dec = c.n_heads_dec * static_cast<int>(1 + rng.below(6));
    c.enc_depth = static_cast<int>(rng.below(3));
    c.dec_depth = static_cast<int>(rng.below(3));
    c.distill_dim = 2 + static_cast<int>(rng.below(5));
    c.sem_dim = 2 + static_cast<int>(rng.below(5));
    CHECK(ModelParams(c).scalar_count() == closed_form_count(c));
  }
}

TEST_CASE("full-size configuration shapes") {
  const auto shapes = param_shapes(full_model_config());
  auto find = [&](const std::string& name) {
    return *std::find_if(shapes.begin(), shapes.end(), [&](const TensorShape& s) { return s.name == name; });
  };
  CHECK(find("patch_proj.w").rows == 768);
  CHECK(find("patch_proj.w").cols == 768);
  CHECK(find("pos_dec").rows == 197);
  CHECK(find("pos_dec").cols == 512);
  CHECK(find("pos_sketch").rows == 197);
  CHECK(find("pos_sketch").cols == 768);
  CHECK(find("mask_token").rows == 1);
}

TEST_CASE("head dimensions must divide the widths") {
  ModelConfig c = tiny_model_config();
  c.n_heads_enc = 3;
  CHECK_THROWS_AS(init_params(c, 0), ConfigError);
}

TEST_CASE("depth 0 and all-zero blocks leave tokens unchanged") {
  Rng rng(4);
  ModelConfig c = tiny_model_config();
  c.enc_depth = 0;
  TokenEmbeddings tok{random_matrix(rng, 9, c.d_enc), true};
  CHECK(encode(tok, init_params(c, 1)) == tok.tokens);

  const ModelConfig t = tiny_model_config();
  const ModelParams zero(t);  // every tensor zero, including LN gains
  TokenEmbeddings tok2{random_matrix(rng, 9, t.d_enc), true};
  CHECK(encode(tok2, zero) == tok2.tokens);
}

TEST_CASE("encoder matches a loop-based reference forward pass") {
  const ModelConfig c = tiny_model_config();
  const ModelParams p = randomized(c, 8, 0.3);
  Rng rng(9);
  Matrix x = random_matrix(rng, 7, c.d_enc);
  const Matrix got = encode({x, true}, p);
  for (int b = 0; b < c.enc_depth; ++b) x = ref_block(p, pname::enc_block(b, ""), x, c.n_heads_enc);
  CHECK((got - x).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("encoder keeps the sequence length at full width") {
  ModelConfig c = full_model_config();
  c.enc_depth = 1;
  c.dec_depth = 1;
  const ModelParams p = init_params(c, 1);
  Rng rng(10);
  const PatchSequence seq = patchify(random_image(rng, 224, 224, 3), 16);
  const MaskPlan mask = sample_mask(196, 0.75, 2);
  const Matrix enc = encode(embed_patches(seq, mask, p), p);
  CHECK(enc.rows() == 50);
  CHECK(enc.cols() == 768);
  const FeatureBundle full = decode(encode(embed_patches(seq, full_visibility(196), p), p), full_visibility(196), p);
  CHECK(full.dec_tokens.rows() == 197);
  CHECK(full.dec_tokens.cols() == 512);
  CHECK(full.pixel_pred.rows() == 0);

  ImageTensor sketch(224, 224, 1, 0.5);
  const Matrix fs = forward_sketch(embed_sketch(patchify(sketch, 16), p), p);
  CHECK(fs.rows() == 197);
  CHECK(fs.cols() == 768);
}

TEST_CASE("non-finite input tokens are reported by index") {
  const ModelParams p = init_params(tiny_model_config(), 1);
  Matrix x = Matrix::Zero(5, 16);
  x(3, 2) = std::nan("");
  try {
    encode({x, true}, p);
    FAIL("expected a numeric error");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("token 3") != std::string::npos);
  }
}

TEST_CASE("decoder places pixel predictions at masked indices") {
  const ModelConfig c = tiny_model_config();
  const ModelParams p = randomized(c, 11, 0.2);
  Rng rng(12);
  const PatchSequence seq = patchify(random_image(rng, 32, 32, 3), 8);
  const MaskPlan one = sample_mask(16, 1.0 / 16.0, 3);
  REQUIRE(one.n_masked() == 1);
  const FeatureBundle out = decode(encode(embed_patches(seq, one, p), p), one, p);
  REQUIRE(out.pixel_pred.rows() == 1);
  const RowVector tok = out.dec_tokens.row(1 + one.masked_idx[0]);
  const Matrix& w = p.at("pixel_head.w");
  for (Index k = 0; k < w.cols(); ++k) {
    double acc = p.at("pixel_head.b")(0, k);
    for (Index j = 0; j < w.rows(); ++j) acc += tok(j) * w(j, k);
    CHECK(out.pixel_pred(0, k) == doctest::Approx(acc).epsilon(1e-12));
  }
  CHECK(out.dec_cls == out.dec_tokens.row(0));

  const MaskPlan none = sample_mask(16, 0.0, 3);
  CHECK(decode(encode(embed_patches(seq, none, p), p), none, p).pixel_pred.rows() == 0);
}

TEST_CASE("decoder input with the wrong token count is rejected") {
  const ModelParams p = init_params(tiny_model_config(), 1);
  const MaskPlan m = sample_mask(16, 0.75, 1);
  CHECK_THROWS_AS(decode(Matrix::Zero(6, 16), m, p), StructuralError);
  CHECK_THROWS_AS(decode(Matrix::Zero(5, 16), sample_mask(9, 0.5, 1), p), StructuralError);
}

TEST_CASE("decoder outputs are invariant to the order of visible tokens") {
  const ModelConfig c = tiny_model_config();
  const ModelParams p = randomized(c, 13, 0.3);
  Rng rng(14);
  const PatchSequence seq = patchify(random_image(rng, 32, 32, 3), 8);
  const MaskPlan sorted = sample_mask(16, 0.5, 4);
  MaskPlan shuffled = sorted;
  rng.shuffle(std::span<int>(shuffled.visible_idx));
  REQUIRE(shuffled.visible_idx != sorted.visible_idx);
  const FeatureBundle a = decode(encode(embed_patches(seq, sorted, p), p), sorted, p);
  const FeatureBundle b = decode(encode(embed_patches(seq, shuffled, p), p), shuffled, p);
  CHECK((a.dec_tokens - b.dec_tokens).cwiseAbs().maxCoeff() < 1e-6);
  CHECK((a.pixel_pred - b.pixel_pred).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("sketch branch shares the encoder weights") {
  const ModelConfig c = tiny_model_config();
  ModelParams p = randomized(c, 15, 0.3);
  Rng rng(16);
  TokenEmbeddings tok{random_matrix(rng, 17, c.d_enc), true};
  CHECK(forward_sketch(tok, p) == encode(tok, p));

  // Perturbing an encoder weight moves both outputs identically.
  const Matrix base_s = forward_sketch(tok, p), base_e = encode(tok, p);
  p.at("enc.1.mlp.fc1.w")(2, 3) += 1e-3;
  const Matrix ds = forward_sketch(tok, p) - base_s, de = encode(tok, p) - base_e;
  CHECK(ds.norm() > 0.0);
  CHECK(ds == de);

  // One autodiff leaf per tensor name: both branches read the same node.
  ParamGraph g(p, true);
  CHECK(g["enc.0.attn.qkv.w"].node() == g["enc.0.attn.qkv.w"].node());
  const ad::Var img = graph::encoder(g, ad::constant(tok.tokens));
  const ad::Var sk = graph::encoder(g, ad::constant(tok.tokens));
  ad::backward(ad::add(ad::sum(img), ad::sum(sk)));
  const Gradients both = g.gradients();
  ParamGraph g1(p, true);
  ad::backward(ad::sum(graph::encoder(g1, ad::constant(tok.tokens))));
  const Gradients once = g1.gradients();
  const auto k = p.index_of("enc.0.attn.qkv.w");
  CHECK((both[k] - 2.0 * once[k]).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("backbone gradients match finite differences") {
  const ModelConfig c = tiny_model_config();
  const ModelParams p = randomized(c, 17, 0.3);
  Rng rng(18);
  const PatchSequence seq = patchify(random_image(rng, 32, 32, 3), 8);
  const MaskPlan m = sample_mask(16, 0.5, 5);
  Matrix weights = random_matrix(rng, 17, c.d_dec);
  Matrix pix_w = random_matrix(rng, m.n_masked(), c.patch_dim());
  auto objective = [&](const ModelParams& q, Gradients* grads) {
    ParamGraph g(q, grads != nullptr);
    const auto out = graph::decoder(g, graph::encoder(g, graph::embed_image_tokens(g, seq, m)), m);
    ad::Var s = ad::add(ad::sum(ad::mul(out.tokens, ad::constant(weights))),
                        ad::sum(ad::mul(out.pixel_pred, ad::constant(pix_w))));
    if (grads) {
      ad::backward(s);
      *grads = g.gradients();
    }
    return s.scalar();
  };
  Gradients analytic;
  objective(p, &analytic);
  const double h = 1e-5;
  for (const char* name : {"patch_proj.w", "cls_token", "pos_enc", "enc.0.attn.qkv.w", "enc.1.ln2.g", "dec_embed.w",
                           "mask_token", "pos_dec", "dec.0.mlp.fc2.w", "pixel_head.b"}) {
    const auto k = p.index_of(name);
    Matrix fd(p.tensors()[k].value.rows(), p.tensors()[k].value.cols());
    for (Index i = 0; i < fd.size(); ++i) {
      ModelParams q = p;
      q.tensors()[k].value.data()[i] += h;
      const double up = objective(q, nullptr);
      q.tensors()[k].value.data()[i] -= 2 * h;
      fd.data()[i] = (up - objective(q, nullptr)) / (2 * h);
    }
    INFO(name);
    CHECK((analytic[k] - fd).norm() / std::max(fd.norm(), 1e-8) < 1e-5);
  }
}

TEST_CASE("output shapes depend only on the config") {
  Rng rng(19);
  for (int trial = 0; trial < 50; ++trial) {
    ModelConfig c = tiny_model_config();
    c.patch_size = 2 << rng.below(2);
    c.image_size = c.patch_size * static_cast<int>(1 + rng.below(4));
    c.n_heads_enc = 1 + static_cast<int>(rng.below(2));
    c.n_heads_dec = 1 + static_cast<int>(rng.below(2));
    c.d_enc = c.n_heads_enc * static_cast<int>(1 + rng.below(4));
    c.d_dec = c.n_heads_dec * static_cast<int>(1 + rng.below(4));
    c.enc_depth = static_cast<int>(rng.below(3));
    c.dec_depth = static_cast<int>(rng.below(3));
    const ModelParams p = init_params(c, trial);
    const int n = c.n_patches();
    const MaskPlan m = sample_mask(n, rng.uniform(0.0, 0.9), trial);
    const PatchSequence seq = patchify(random_image(rng, c.image_size, c.image_size, 3), c.patch_size);
    const Matrix enc = encode(embed_patches(seq, m, p), p);
    CHECK(enc.rows() == m.n_visible() + 1);
    CHECK(enc.cols() == c.d_enc);
    const FeatureBundle out = decode(enc, m, p);
    CHECK(out.dec_tokens.rows() == n + 1);
    CHECK(out.dec_tokens.cols() == c.d_dec);
    CHECK(out.pixel_pred.rows() == m.n_masked());
    CHECK(out.pixel_pred.cols() == c.patch_dim());
  }
}
