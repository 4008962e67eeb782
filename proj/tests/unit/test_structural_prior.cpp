#include "test_support.hpp"

#include "vmae/errors.hpp"
#include "vmae/structural_prior.hpp"

#include <doctest.h>

#include <cmath>

using namespace vmae;
using vmae::testing::max_gradient_error;
using vmae::testing::random_matrix;

namespace {

std::vector<double> brute_softmax(const std::vector<double>& z) {
  double mx = z[0];
  for (double v : z) mx = std::max(mx, v);
  double s = 0;
  std::vector<double> p(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) s += (p[i] = std::exp(z[i] - mx));
  for (double& v : p) v /= s;
  return p;
}

// -sum_k p_k log q_k with p = softmax(a W'), q = softmax(b W).
double brute_ce(const Matrix& a, Index ra, const Matrix& wt, const Matrix& b, Index rb, const Matrix& ws) {
  std::vector<double> zt(static_cast<std::size_t>(wt.cols())), zs(static_cast<std::size_t>(ws.cols()));
  for (Index k = 0; k < wt.cols(); ++k) {
    for (Index j = 0; j < wt.rows(); ++j) zt[static_cast<std::size_t>(k)] += a(ra, j) * wt(j, k);
    for (Index j = 0; j < ws.rows(); ++j) zs[static_cast<std::size_t>(k)] += b(rb, j) * ws(j, k);
  }
  const auto p = brute_softmax(zt), q = brute_softmax(zs);
  double ce = 0;
  for (std::size_t k = 0; k < p.size(); ++k) ce -= p[k] * std::log(q[k]);
  return ce;
}

MaskPlan plan_with(int n, std::vector<int> masked) {
  MaskPlan m;
  m.n_tokens = n;
  m.masked_idx = masked;
  for (int i = 0; i < n; ++i)
    if (std::find(masked.begin(), masked.end(), i) == masked.end()) m.visible_idx.push_back(i);
  m.ratio = static_cast<double>(masked.size()) / n;
  return m;
}

DistillHeads zero_heads(Index de, Index dd, Index k) {
  return {Matrix::Zero(de, k), Matrix::Zero(dd, k), Matrix::Zero(de, k), Matrix::Zero(dd, k), 1.0};
}

}  // namespace

TEST_CASE("uniform distributions give ln K") {
  Rng rng(1);
  const Matrix s = random_matrix(rng, 6, 5), t = random_matrix(rng, 6, 3);
  const MaskPlan m = plan_with(5, {0, 2, 4});
  CHECK(patch_distill_loss(s, t, m, zero_heads(5, 3, 4)) == doctest::Approx(std::log(4.0)).epsilon(1e-14));
  CHECK(patch_distill_loss(s, t, m, zero_heads(5, 3, 4), false) == doctest::Approx(3 * std::log(4.0)).epsilon(1e-14));
  CHECK(cls_distill_loss(s.row(0), t.row(0), zero_heads(5, 3, 8)) == doctest::Approx(std::log(8.0)).epsilon(1e-14));
}

TEST_CASE("matched sharp distributions give a loss near zero") {
  Matrix f = Matrix::Zero(3, 2);
  f(1, 0) = 1.0;
  f(2, 0) = 1.0;
  DistillHeads h = zero_heads(2, 2, 3);
  h.teacher(0, 1) = 60.0;
  h.student(0, 1) = 60.0;
  const double loss = patch_distill_loss(f, f, plan_with(2, {0, 1}), h);
  CHECK(loss > 0.0);
  CHECK(loss < 1e-20);
}

TEST_CASE("patch loss matches a brute-force oracle") {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix s = random_matrix(rng, 3, 4), t = random_matrix(rng, 3, 5);
    DistillHeads h{random_matrix(rng, 4, 3), random_matrix(rng, 5, 3), random_matrix(rng, 4, 3), random_matrix(rng, 5, 3), 1.0};
    const MaskPlan m = plan_with(2, {0, 1});
    const double expect = (brute_ce(s, 1, h.teacher, t, 1, h.student) + brute_ce(s, 2, h.teacher, t, 2, h.student)) / 2;
    CHECK(std::abs(patch_distill_loss(s, t, m, h) - expect) < 1e-9);
  }
}

TEST_CASE("CLS loss matches a brute-force oracle and the entropy identity") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix s = random_matrix(rng, 1, 4), t = random_matrix(rng, 1, 6);
    DistillHeads h{random_matrix(rng, 4, 5), random_matrix(rng, 6, 5), random_matrix(rng, 4, 5), random_matrix(rng, 6, 5), 1.0};
    CHECK(std::abs(cls_distill_loss(s.row(0), t.row(0), h) - brute_ce(s, 0, h.teacher_cls, t, 0, h.student_cls)) < 1e-9);

    // Identical features and heads: cross-entropy collapses to the entropy.
    DistillHeads same = h;
    same.student_cls = same.teacher_cls;
    const Matrix u = random_matrix(rng, 1, 4);
    std::vector<double> z(5);
    for (int k = 0; k < 5; ++k)
      for (int j = 0; j < 4; ++j) z[static_cast<std::size_t>(k)] += u(0, j) * same.teacher_cls(j, k);
    double entropy = 0;
    for (double p : brute_softmax(z)) entropy -= p * std::log(p);
    CHECK(std::abs(cls_distill_loss(u.row(0), u.row(0), same) - entropy) < 1e-12);
  }
}

TEST_CASE("losses are bounded below by the teacher entropy") {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix s = random_matrix(rng, 1, 3), t = random_matrix(rng, 1, 3);
    DistillHeads h{random_matrix(rng, 3, 4), random_matrix(rng, 3, 4), random_matrix(rng, 3, 4), random_matrix(rng, 3, 4), 1.0};
    std::vector<double> z(4);
    for (int k = 0; k < 4; ++k)
      for (int j = 0; j < 3; ++j) z[static_cast<std::size_t>(k)] += s(0, j) * h.teacher_cls(j, k);
    double entropy = 0;
    for (double p : brute_softmax(z)) entropy -= p * std::log(p);
    CHECK(cls_distill_loss(s.row(0), t.row(0), h) >= entropy - 1e-12);
  }
}

TEST_CASE("visible tokens do not influence the patch loss") {
  Rng rng(5);
  const Matrix s = random_matrix(rng, 9, 4), t = random_matrix(rng, 9, 3);
  DistillHeads h{random_matrix(rng, 4, 5), random_matrix(rng, 3, 5), random_matrix(rng, 4, 5), random_matrix(rng, 3, 5), 1.0};
  const MaskPlan m = sample_mask(8, 0.5, 7);
  const double base = patch_distill_loss(s, t, m, h);
  Matrix s2 = s, t2 = t;
  s2.row(0) = random_matrix(rng, 1, 4);
  t2.row(0) = random_matrix(rng, 1, 3);
  for (int v : m.visible_idx) {
    s2.row(1 + v) = random_matrix(rng, 1, 4);
    t2.row(1 + v) = random_matrix(rng, 1, 3);
  }
  CHECK(patch_distill_loss(s2, t2, m, h) == base);
  t2.row(1 + m.masked_idx[0]) *= 2.0;
  CHECK(patch_distill_loss(s2, t2, m, h) != base);
}

TEST_CASE("misaligned distillation inputs are a structural error") {
  const Matrix s = Matrix::Zero(5, 2), t = Matrix::Zero(4, 2);
  CHECK_THROWS_AS(patch_distill_loss(s, t, plan_with(4, {1}), zero_heads(2, 2, 2)), StructuralError);
}

TEST_CASE("distillation gradients match finite differences") {
  Rng rng(6);
  const MaskPlan m = sample_mask(6, 0.5, 3);
  const std::vector<Matrix> in{random_matrix(rng, 7, 4), random_matrix(rng, 7, 3), random_matrix(rng, 4, 5),
                               random_matrix(rng, 3, 5)};
  for (double temp : {1.0, 0.5}) {
    const DistillOptions opt{temp, true, false};
    CHECK(max_gradient_error(in, [&](auto& v) { return graph::patch_distill_loss(v[0], v[1], m, v[2], v[3], opt); }) < 1e-5);
    CHECK(max_gradient_error(in, [&](auto& v) { return graph::cls_distill_loss(v[0], v[1], v[2], v[3], opt); }) < 1e-5);
  }
}

TEST_CASE("stopping the teacher gradient zeroes the teacher-side gradients") {
  Rng rng(7);
  const MaskPlan m = sample_mask(4, 0.5, 1);
  ad::Var s = ad::leaf(random_matrix(rng, 5, 3)), t = ad::leaf(random_matrix(rng, 5, 3));
  ad::Var wt = ad::leaf(random_matrix(rng, 3, 4)), ws = ad::leaf(random_matrix(rng, 3, 4));
  ad::backward(graph::patch_distill_loss(s, t, m, wt, ws, {1.0, true, true}));
  CHECK(s.grad().isZero(0.0));
  CHECK(wt.grad().isZero(0.0));
  CHECK(ws.grad().norm() > 0.0);
}

TEST_CASE("flat images have no edges") {
  const SketchMap sk = extract_edges(ImageTensor(16, 16, 3, 0.4));
  CHECK(sk.map.channels() == 1);
  CHECK(sk.source == SketchSource::builtin_gradient);
  for (double v : sk.map.data()) CHECK(v == 0.0);
}

TEST_CASE("a vertical step responds only in the three columns around it") {
  for (int c = 2; c < 14; ++c) {
    ImageTensor img(12, 16, 3);
    for (int r = 0; r < 12; ++r)
      for (int x = c; x < 16; ++x)
        for (int k = 0; k < 3; ++k) img.at(r, x, k) = 1.0;
    const SketchMap sk = extract_edges(img);
    for (int r = 0; r < 12; ++r) {
      for (int x = 0; x < 16; ++x) {
        // Kernel support [x-1, x+1] straddles the step only for x in {c-1, c}.
        const bool straddles = x == c - 1 || x == c;
        INFO("c=" << c << " x=" << x);
        if (straddles) {
          CHECK(sk.map.at(r, x, 0) == doctest::Approx(1.0));
        } else {
          CHECK(sk.map.at(r, x, 0) == 0.0);
        }
        if (x < c - 1 || x > c + 1) CHECK(sk.map.at(r, x, 0) == 0.0);
      }
    }
  }
}

TEST_CASE("edges cover the rendered vehicle outlines") {
  const auto specs = sample_vehicle_specs(20, 11);
  for (const auto& spec : specs) {
    const RenderedVehicle v = render_vehicle(spec, 64);
    const SketchMap sk = extract_edges(v.image);
    int outline = 0, hit = 0;
    for (int r = 0; r < 64; ++r)
      for (int c = 0; c < 64; ++c) {
        if (v.outline.at(r, c, 0) < 0.5) continue;
        ++outline;
        hit += sk.map.at(r, c, 0) > 0.0 ? 1 : 0;
      }
    REQUIRE(outline > 0);
    CHECK(hit / static_cast<double>(outline) >= 0.9);
  }
}

TEST_CASE("edge maps stay within [0, 1]") {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const ImageTensor img = vmae::testing::random_image(rng, 8 + trial, 10, trial % 2 ? 3 : 1);
    const SketchMap sk = extract_edges(img);
    CHECK(sk.map.height() == img.height());
    CHECK(sk.map.width() == img.width());
    for (double v : sk.map.data()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}
