#include "test_support.hpp"

#include "vmae/errors.hpp"
#include "vmae/semantic_prior.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>

using namespace vmae;
using vmae::testing::max_gradient_error;
using vmae::testing::random_matrix;
using vmae::testing::TempDir;

namespace {

RowVector unit(RowVector v) { return v / v.norm(); }

RowVector random_row(Rng& rng, Index n) { return random_matrix(rng, 1, n).row(0); }

RowVector random_distribution(Rng& rng, Index m) {
  RowVector p(m);
  for (Index j = 0; j < m; ++j) p(j) = rng.uniform(0.01, 1.0);
  return p / p.sum();
}

}  // namespace

TEST_CASE("feature alignment hits the reference values") {
  const Matrix head = Matrix::Identity(3, 3);
  RowVector a(3), b(3), c(3);
  a << 1, 0, 0;
  b << 0, 1, 0;
  c << -2, 0, 0;
  CHECK(feature_align_loss(a, a, head) == doctest::Approx(0.0));
  CHECK(feature_align_loss(a, c, head) == doctest::Approx(4.0));
  CHECK(feature_align_loss(a, b, head) == doctest::Approx(2.0));
  CHECK_THROWS_AS(feature_align_loss(RowVector::Zero(3), a, head), NumericError);
}

TEST_CASE("feature alignment equals 2 - 2 cos and ignores scale") {
  Rng rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    const RowVector f = random_row(rng, 5), v = random_row(rng, 4);
    const Matrix head = random_matrix(rng, 5, 4);
    const RowVector proj = f * head;
    const double cos = proj.dot(v) / (proj.norm() * v.norm());
    const double loss = feature_align_loss(f, v, head);
    CHECK(std::abs(loss - (2.0 - 2.0 * cos)) < 1e-9);
    CHECK(loss >= 0.0);
    CHECK(loss <= 4.0);
    if (trial < 50) {
      const double sf = std::pow(10.0, rng.uniform(-3, 3)), sv = std::pow(10.0, rng.uniform(-3, 3));
      CHECK(std::abs(feature_align_loss(sf * f, sv * v, head) - loss) < 1e-12);
    }
  }
}

TEST_CASE("similarity distributions") {
  RowVector f(2);
  f << 1, 0;
  Matrix w(2, 2);
  w << 1, 0, 0, 1;
  const RowVector s = similarity_distribution(f, w, 1.0);
  const double e = std::exp(1.0);
  CHECK(s(0) == doctest::Approx(e / (e + 1)).epsilon(1e-14));
  CHECK(s(1) == doctest::Approx(1 / (e + 1)).epsilon(1e-14));

  Matrix same(4, 2);
  same.rowwise() = f;
  for (Index j = 0; j < 4; ++j) CHECK(similarity_distribution(f, same, 1.0)(j) == doctest::Approx(0.25));

  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const Index m = 1 + static_cast<Index>(rng.below(20));
    const RowVector u = unit(random_row(rng, 6));
    Matrix bank = random_matrix(rng, m, 6);
    for (Index j = 0; j < m; ++j) bank.row(j).normalize();
    const RowVector p = similarity_distribution(u, bank, rng.uniform(0.05, 5.0));
    CHECK(std::abs(p.sum() - 1.0) <= 1e-6);
    CHECK(p.minCoeff() > 0.0);
    const RowVector flat = similarity_distribution(u, bank, 1e4);
    CHECK((flat.array() - 1.0 / m).abs().maxCoeff() <= 1e-3);
  }
  CHECK_THROWS_AS(similarity_distribution(f, w, 0.0), ParameterError);
  CHECK_THROWS_AS(similarity_distribution(f, w, -1.0), ParameterError);
}

TEST_CASE("consistency loss decomposes into KL and entropy") {
  const RowVector u = RowVector::Constant(4, 0.25);
  const ConsistencyTerms t = consistency_loss(u, u);
  CHECK(t.kl == doctest::Approx(0.0));
  CHECK(t.entropy == doctest::Approx(std::log(4.0)).epsilon(1e-14));
  CHECK(t.total == doctest::Approx(std::log(4.0)).epsilon(1e-14));

  RowVector sharp(3);
  sharp << 1 - 2e-12, 1e-12, 1e-12;
  CHECK(consistency_loss(sharp, sharp).total < 1e-9);

  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const Index m = 2 + static_cast<Index>(rng.below(6));
    const RowVector p = random_distribution(rng, m), q = random_distribution(rng, m);
    double kl = 0, h = 0;
    for (Index j = 0; j < m; ++j) {
      kl += p(j) * std::log(p(j) / q(j));
      h -= q(j) * std::log(q(j));
    }
    const ConsistencyTerms c = consistency_loss(p, q);
    CHECK(std::abs(c.kl - kl) < 1e-9);
    CHECK(std::abs(c.entropy - h) < 1e-9);
    CHECK(c.kl >= 0.0);
    CHECK(c.entropy >= 0.0);
    CHECK(c.entropy <= std::log(static_cast<double>(m)) + 1e-12);
    CHECK(std::abs(consistency_loss(p, p).kl) <= 1e-9);
  }
}

TEST_CASE("a zero in the student where the target is positive is a fault") {
  RowVector p(2), q(2);
  p << 0.5, 0.5;
  q << 1.0, 0.0;
  const ConsistencyTerms t = consistency_loss(p, q);
  CHECK(t.fault);
  CHECK(std::isinf(t.total));
  CHECK_THROWS_AS(consistency_loss(p, RowVector::Constant(3, 1.0 / 3)), StructuralError);
}

TEST_CASE("graph consistency loss agrees with the direct form and its gradients") {
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    Matrix bank = random_matrix(rng, 5, 4);
    for (Index j = 0; j < 5; ++j) bank.row(j).normalize();
    const RowVector vc = unit(random_row(rng, 4));
    const Matrix f = unit(random_row(rng, 4));
    const auto g = graph::consistency_loss(ad::constant(f), bank, vc, 1.0);
    const ConsistencyTerms d =
        consistency_loss(similarity_distribution(vc, bank, 1.0), similarity_distribution(f.row(0), bank, 1.0));
    CHECK(std::abs(g.kl.scalar() - d.kl) < 1e-12);
    CHECK(std::abs(g.entropy.scalar() - d.entropy) < 1e-12);

    const Matrix feat = random_matrix(rng, 1, 6), head = random_matrix(rng, 6, 4);
    CHECK(max_gradient_error({feat, head}, [&](auto& v) {
            return graph::consistency_loss(ad::l2_normalize_rows(ad::matmul(v[0], v[1])), bank, vc, 1.0).total;
          }) < 1e-5);
    CHECK(max_gradient_error({feat, head}, [&](auto& v) { return graph::feature_align_loss(v[0], vc, v[1]); }) < 1e-5);
  }
}

TEST_CASE("stub embedder is deterministic and order-free for text") {
  StubEmbedder a(7, 16), b(7, 16), c(8, 16);
  CHECK(a.embed_text("a red sedan") == b.embed_text("a red sedan"));
  CHECK(a.embed_text("a red sedan") == a.embed_text("sedan red a"));
  CHECK(a.embed_text("A  Red, sedan!") == a.embed_text("a red sedan"));
  CHECK(a.embed_text("a red sedan") != c.embed_text("a red sedan"));
  CHECK(a.embed_text("a red sedan").norm() == doctest::Approx(1.0));
  Rng rng(5);
  const ImageTensor img = vmae::testing::random_image(rng, 32, 32, 3);
  const ImageRef ref{&img, "x", {"red", "sedan"}};
  CHECK(a.embed_image(ref) == b.embed_image(ref));
  CHECK(a.embed_image(ref).norm() == doctest::Approx(1.0));
  CHECK(a.embed_image({nullptr, "blank", {}}).norm() == doctest::Approx(1.0));
  CHECK_THROWS_AS(StubEmbedder(1, 1), ParameterError);
}

TEST_CASE("captions retrieve their own synthetic image among decoys") {
  const auto specs = sample_vehicle_specs(64, 21);
  StubEmbedder emb(3, 64);
  // One vehicle per color/type combination that appears, at most 9 (1 + 8 decoys).
  std::vector<VehicleSpec> picked;
  for (const auto& s : specs) {
    bool dup = false;
    for (const auto& p : picked) dup |= p.color == s.color && p.type == s.type;
    if (!dup) picked.push_back(s);
    if (picked.size() == 9) break;
  }
  REQUIRE(picked.size() == 9);
  std::vector<ImageTensor> images;
  std::vector<RowVector> img_vecs, txt_vecs;
  for (std::size_t i = 0; i < picked.size(); ++i) images.push_back(render_vehicle(picked[i], 32).image);
  for (std::size_t i = 0; i < picked.size(); ++i) {
    const auto& s = picked[i];
    img_vecs.push_back(emb.embed_image(
        {&images[i], "v", {std::string(kColorNames[static_cast<std::size_t>(s.color)]), std::string(kTypeNames[static_cast<std::size_t>(s.type)])}}));
    txt_vecs.push_back(emb.embed_text(caption_for(s, static_cast<int>(i) % 3)));
  }
  int correct = 0;
  for (std::size_t q = 0; q < picked.size(); ++q) {
    std::size_t best = 0;
    for (std::size_t g = 1; g < picked.size(); ++g)
      if (txt_vecs[q].dot(img_vecs[g]) > txt_vecs[q].dot(img_vecs[best])) best = g;
    correct += best == q ? 1 : 0;
  }
  CHECK(correct == static_cast<int>(picked.size()));
}

TEST_CASE("embedding banks round-trip in text and binary form") {
  TempDir dir("bank");
  Rng rng(6);
  TextEmbeddingBank bank;
  bank.ids = {"txt:a red sedan", "img:0001", "txt:blue bus"};
  bank.vectors = random_matrix(rng, 3, 512);
  save_embedding_bank(bank, dir / "b.txt");
  const TextEmbeddingBank t = load_embedding_bank(dir / "b.txt");
  CHECK(t.ids == bank.ids);
  CHECK(t.vectors.rows() == 3);
  CHECK(t.vectors.cols() == 512);
  CHECK(t.vectors == bank.vectors);
  CHECK(t.find("img:0001") == 1);

  // The binary variant stores float32, so feed it float-representable values.
  TextEmbeddingBank f = bank;
  for (Index i = 0; i < f.vectors.size(); ++i) f.vectors.data()[i] = static_cast<float>(f.vectors.data()[i]);
  save_embedding_bank(f, dir / "b.bin");
  const TextEmbeddingBank fb = load_embedding_bank(dir / "b.bin");
  CHECK(fb.ids == f.ids);
  CHECK(fb.vectors == f.vectors);
}

TEST_CASE("malformed banks are parse errors naming the record") {
  TempDir dir("bank_bad");
  auto write = [&](const std::string& name, const std::string& body) {
    std::ofstream(dir / name) << body;
    return dir / name;
  };
  CHECK_THROWS_AS(load_embedding_bank(write("h.txt", "NOPE v1 1 2\na\t1,2\n")), ParseError);
  CHECK_THROWS_AS(load_embedding_bank(write("d.txt", "VMAE-EMB v1 1 3\na\t1,2\n")), ParseError);
  CHECK_THROWS_AS(load_embedding_bank(write("u.txt", "VMAE-EMB v1 2 2\na\t1,2\na\t3,4\n")), ParseError);
  try {
    load_embedding_bank(write("r.txt", "VMAE-EMB v1 2 2\na\t1,2\nb\t3\n"));
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("'b'") != std::string::npos);
  }
  CHECK_THROWS_AS(load_embedding_bank(dir / "missing.txt"), IoError);
}

TEST_CASE("stub and file-bank paths give identical distributions") {
  TempDir dir("bank_eq");
  StubEmbedder stub(9, 8);
  const std::vector<std::string> captions{"a red sedan", "a blue bus", "a silver truck", "a green suv"};
  TextEmbeddingBank bank;
  Matrix w(4, 8);
  for (std::size_t i = 0; i < captions.size(); ++i) {
    bank.ids.push_back(std::string(kTextKeyPrefix) + captions[i]);
    w.row(static_cast<Index>(i)) = stub.embed_text(captions[i]);
  }
  Rng rng(7);
  const ImageTensor img = vmae::testing::random_image(rng, 32, 32, 3);
  const RowVector iv = stub.embed_image({&img, "car7", {"red"}});
  bank.ids.push_back(std::string(kImageKeyPrefix) + "car7");
  bank.vectors.resize(5, 8);
  bank.vectors.topRows(4) = w;
  bank.vectors.row(4) = iv;
  save_embedding_bank(bank, dir / "bank.txt");
  const FileBankEmbedder file(load_embedding_bank(dir / "bank.txt"));

  Matrix wf(4, 8);
  for (std::size_t i = 0; i < captions.size(); ++i) wf.row(static_cast<Index>(i)) = file.embed_text(captions[i]);
  const RowVector ivf = file.embed_image({&img, "car7", {}});
  CHECK(similarity_distribution(ivf, wf, 1.0) == similarity_distribution(iv, w, 1.0));
  CHECK_THROWS_AS(file.embed_text("unknown"), InputError);
}
