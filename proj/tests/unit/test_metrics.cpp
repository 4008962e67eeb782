#include "metric_oracles.hpp"
#include "test_support.hpp"

#include "vmae/errors.hpp"
#include "vmae/metrics.hpp"

#include <doctest.h>

#include <fstream>

using namespace vmae;
using namespace vmae::testing;

TEST_CASE("attribute metrics on a hand-computed example") {
  PredictionSet p;
  p.scores.resize(2, 3);
  p.scores << 0.9, 0.2, 0.7,  //
      0.1, 0.8, 0.4;
  p.ground_truth.resize(2, 3);
  p.ground_truth << 1, 0, 0,  //
      0, 1, 1;
  const MetricReport r = attribute_metrics(p);
  // Attribute 0: TPR 1, TNR 1. Attribute 1: 1, 1. Attribute 2: TPR 0, TNR 0.
  CHECK(r.at("mA") == doctest::Approx(2.0 / 3.0));
  // Example 0: P={0,2}, T={0} -> acc 1/2, prec 1/2, rec 1. Example 1: P={1}, T={1,2} -> 1/2, 1, 1/2.
  CHECK(r.at("accuracy") == doctest::Approx(0.5));
  CHECK(r.at("precision") == doctest::Approx(0.75));
  CHECK(r.at("recall") == doctest::Approx(0.75));
  CHECK(r.at("f1") == doctest::Approx(0.75));
  CHECK(r.count("zero_division") == 0);
}

TEST_CASE("perfect and empty predictions") {
  PredictionSet p;
  p.ground_truth.resize(3, 2);
  p.ground_truth << 1, 1, 0, 1, 1, 1;
  p.scores = p.ground_truth;
  const MetricReport perfect = attribute_metrics(p);
  for (const char* k : {"accuracy", "precision", "recall", "f1"}) CHECK(perfect.at(k) == doctest::Approx(1.0));
  // Attribute 0 has a negative, attribute 1 none: TNR 0/0 counts as 0.
  CHECK(perfect.at("mA") == doctest::Approx(0.75));
  CHECK(perfect.count("zero_division") == 1);

  p.ground_truth.setZero();
  p.scores.setZero();
  const MetricReport empty = attribute_metrics(p);
  CHECK(empty.at("accuracy") == 0.0);
  CHECK(empty.count("zero_division") > 0);
}

TEST_CASE("attribute metrics input errors") {
  PredictionSet p{Matrix::Zero(2, 2), Matrix::Zero(2, 2), TaskKind::multilabel};
  p.ground_truth(0, 0) = 0.5;
  CHECK_THROWS_AS(attribute_metrics(p), InputError);
  p.ground_truth(0, 0) = 1.0;
  CHECK_THROWS_AS(attribute_metrics(p, 1.0), ParameterError);
  CHECK_THROWS_AS(attribute_metrics(p, 0.0), ParameterError);
  p.scores = Matrix::Zero(2, 3);
  CHECK_THROWS_AS(attribute_metrics(p), StructuralError);
}

TEST_CASE("attribute metrics match the brute-force oracle") {
  Rng rng(1);
  for (int trial = 0; trial < 300; ++trial) {
    const auto x = random_attribute_instance(rng);
    const double th = trial % 3 == 0 ? 0.5 : rng.uniform(0.05, 0.95);
    const MetricReport r = attribute_metrics({x.scores, x.truth, TaskKind::multilabel}, th);
    const AttributeOracle o = attribute_oracle(x.scores, x.truth, th);
    CHECK(std::abs(r.at("mA") - o.ma) <= 1e-9);
    CHECK(std::abs(r.at("accuracy") - o.accuracy) <= 1e-9);
    CHECK(std::abs(r.at("precision") - o.precision) <= 1e-9);
    CHECK(std::abs(r.at("recall") - o.recall) <= 1e-9);
    CHECK(std::abs(r.at("f1") - o.f1) <= 1e-9);
    const double p = r.at("precision"), rc = r.at("recall");
    if (p + rc > 0) CHECK(std::abs(r.at("f1") - 2 * p * rc / (p + rc)) <= 1e-12);
  }
}

TEST_CASE("classification accuracy and mean class accuracy") {
  Matrix s(4, 3);
  s << 0.9, 0.1, 0.0,  //
      0.2, 0.7, 0.1,   //
      0.5, 0.5, 0.0,   // tie goes to class 0
      0.0, 0.1, 0.9;
  const MetricReport r = classification_metrics(s, {0, 1, 1, 2});
  CHECK(r.at("accuracy") == doctest::Approx(0.75));
  CHECK(r.at("mAcc") == doctest::Approx((1.0 + 0.5 + 1.0) / 3.0));
  CHECK(classification_metrics(Matrix::Ones(3, 1), {0, 0, 0}).at("accuracy") == 1.0);
  CHECK_THROWS_AS(classification_metrics(s, {0, 1, 5, 2}), InputError);
  CHECK_THROWS_AS(classification_metrics(s, {0, 1}), StructuralError);
}

TEST_CASE("retrieval metrics on a hand-computed example") {
  Matrix q(1, 2), g(4, 2);
  q << 1, 0;
  g << 0, 1,  // cos 0
      1, 0.1,  // highest
      1, 1,    // second
      -1, 0;   // lowest
  const MetricReport r = retrieval_metrics(q, g, {7}, {7, 3, 7, 3}, {1, 2, 3});
  // Ranking: g1 (id 3), g2 (7), g0 (7), g3. Positives at ranks 2 and 3.
  CHECK(r.at("mAP") == doctest::Approx((1.0 / 2 + 2.0 / 3) / 2));
  CHECK(r.at("rank1") == 0.0);
  CHECK(r.at("rank2") == 1.0);
  CHECK(r.at("rank3") == 1.0);

  const MetricReport ex = retrieval_metrics(q, g, {9}, {7, 3, 7, 3});
  CHECK(ex.count("excluded_queries") == 1);
  CHECK(ex.count("queries") == 0);
  CHECK_THROWS_AS(retrieval_metrics(q, g, {7}, {7, 3, 7, 3}, {0}), ParameterError);
}

TEST_CASE("retrieval metrics match the brute-force oracle and rank-k is monotone") {
  Rng rng(2);
  const std::vector<int> ks{1, 2, 3, 5, 10, 20};
  for (int trial = 0; trial < 300; ++trial) {
    const auto x = random_retrieval_instance(rng);
    const MetricReport r = retrieval_metrics(x.query, x.gallery, x.qid, x.gid, ks);
    const RetrievalOracle o = retrieval_oracle(x.query, x.gallery, x.qid, x.gid, ks);
    CHECK(r.count("queries") == o.queries);
    CHECK(std::abs(r.at("mAP") - o.map) <= 1e-9);
    for (std::size_t i = 0; i < ks.size(); ++i) {
      const std::string key = "rank" + std::to_string(ks[i]);
      CHECK(std::abs(r.at(key) - o.rank.at(ks[i])) <= 1e-9);
      if (i > 0) CHECK(r.at(key) >= r.at("rank" + std::to_string(ks[i - 1])));
    }
  }
}

TEST_CASE("retrieval is invariant to monotone rescaling of embeddings") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = random_retrieval_instance(rng);
    const MetricReport a = retrieval_metrics(x.query, x.gallery, x.qid, x.gid);
    for (Index i = 0; i < x.gallery.rows(); ++i) x.gallery.row(i) *= std::ldexp(1.0, static_cast<int>(rng.below(6)));
    const MetricReport b = retrieval_metrics(x.query, x.gallery, x.qid, x.gid);
    CHECK(a == b);
  }
}

TEST_CASE("segmentation metrics") {
  const ConfusionMatrix m{{3, 1, 0}, {0, 2, 0}, {0, 0, 0}};
  const MetricReport r = segmentation_metrics(m);
  // Class 0: IoU 3/4, acc 3/4. Class 1: IoU 2/3, acc 1. Class 2 absent.
  CHECK(r.at("mIoU") == doctest::Approx((0.75 + 2.0 / 3.0) / 2));
  CHECK(r.at("mAcc") == doctest::Approx(0.875));
  CHECK(r.count("classes") == 2);

  // Predicted-only class: IoU 0, accuracy 0 with a zero-division tally.
  const MetricReport p = segmentation_metrics({{1, 1}, {0, 0}});
  CHECK(p.at("mIoU") == doctest::Approx(0.25));
  CHECK(p.at("mAcc") == doctest::Approx(0.25));
  CHECK(p.count("zero_division") == 1);

  CHECK_THROWS_AS(segmentation_metrics({}), InputError);
  CHECK_THROWS_AS(segmentation_metrics({{1, 2}}), InputError);
  CHECK_THROWS_AS(segmentation_metrics({{-1}}), InputError);
}

TEST_CASE("segmentation metrics match the per-pixel oracle") {
  Rng rng(4);
  for (int trial = 0; trial < 300; ++trial) {
    const auto x = random_segmentation_instance(rng);
    const MetricReport r = segmentation_metrics(confusion_of(x.truth, x.pred, x.classes));
    const SegmentationOracle o = segmentation_oracle(x.truth, x.pred, x.classes);
    CHECK(r.count("classes") == o.classes);
    CHECK(std::abs(r.at("mIoU") - o.miou) <= 1e-9);
    CHECK(std::abs(r.at("mAcc") - o.macc) <= 1e-9);
  }
}

TEST_CASE("reports and score tables round-trip through text") {
  TempDir dir("metrics_io");
  MetricReport r;
  r.set("mA", 0.1 + 0.2);
  r.set("f1", 1.0 / 3.0);
  r.set_count("zero_division", 4);
  CHECK(MetricReport::from_text(r.to_text()) == r);
  CHECK_THROWS_AS(r.at("missing"), InputError);
  CHECK(r.count("missing") == 0);
  CHECK_THROWS_AS(MetricReport::from_text("no equals sign\n"), ParseError);

  ScoreTable t{{"red", "blue"}, {"000001", "000002"}, Matrix(2, 2)};
  t.scores << 0.25, 1.0 / 3.0, 1e-17, 0.5;
  save_score_table(t, dir / "s.tsv");
  const ScoreTable back = load_score_table(dir / "s.tsv");
  CHECK(back.columns == t.columns);
  CHECK(back.ids == t.ids);
  CHECK(back.scores == t.scores);

  std::ofstream(dir / "c.txt") << "# truth rows\n3, 1\n0 2\n";
  const ConfusionMatrix c = load_confusion(dir / "c.txt");
  CHECK(c == ConfusionMatrix{{3, 1}, {0, 2}});
  std::ofstream(dir / "bad.txt") << "1 x\n";
  CHECK_THROWS_AS(load_confusion(dir / "bad.txt"), ParseError);
}
