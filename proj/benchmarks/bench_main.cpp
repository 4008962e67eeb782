#include "vmae/backbone.hpp"
#include "vmae/losses.hpp"
#include "vmae/metrics.hpp"
#include "vmae/pretrainer.hpp"
#include "vmae/random.hpp"
#include "vmae/structural_prior.hpp"

#include <benchmark/benchmark.h>

using namespace vmae;

namespace {

ImageTensor noise_image(int side, std::uint64_t seed) {
  Rng rng(seed);
  ImageTensor img(side, side, 3);
  for (auto& v : img.data()) v = rng.uniform();
  return img;
}

void BM_Patchify(benchmark::State& state) {
  const ImageTensor img = noise_image(224, 1);
  for (auto _ : state) benchmark::DoNotOptimize(patchify(img, 16));
}
BENCHMARK(BM_Patchify);

void BM_ExtractEdges(benchmark::State& state) {
  const ImageTensor img = noise_image(static_cast<int>(state.range(0)), 2);
  for (auto _ : state) benchmark::DoNotOptimize(extract_edges(img));
}
BENCHMARK(BM_ExtractEdges)->Arg(32)->Arg(224);

void BM_TrainStep(benchmark::State& state) {
  const ModelConfig cfg = state.range(0) == 0 ? tiny_model_config() : desk_model_config();
  std::vector<ImageTensor> images, sketches;
  std::vector<std::string> captions{"a red sedan", "a blue bus", "a white truck", "a black suv"};
  for (int i = 0; i < 4; ++i) {
    images.push_back(noise_image(cfg.image_size, 10 + i));
    sketches.push_back(extract_edges(images.back()).map);
  }
  LossBatch batch;
  for (int i = 0; i < 4; ++i) {
    LossSample s;
    s.image = &images[static_cast<std::size_t>(i)];
    s.sketch = &sketches[static_cast<std::size_t>(i)];
    s.caption = &captions[static_cast<std::size_t>(i)];
    s.id = std::to_string(i);
    batch.items.push_back(s);
  }
  StubEmbedder emb(1, cfg.sem_dim);
  TrainState st = TrainState::fresh(cfg, 1);
  StepContext ctx{{}, {}, 1e-4, &emb};
  for (auto _ : state) {
    batch.mask_seed = static_cast<std::uint64_t>(st.step);
    benchmark::DoNotOptimize(train_step(st, batch, ctx));
  }
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_RetrievalMetrics(benchmark::State& state) {
  Rng rng(3);
  const Index n = state.range(0);
  Matrix q(n / 4, 64), g(n, 64);
  for (Index i = 0; i < q.size(); ++i) q.data()[i] = rng.normal();
  for (Index i = 0; i < g.size(); ++i) g.data()[i] = rng.normal();
  std::vector<int> qid, gid;
  for (Index i = 0; i < q.rows(); ++i) qid.push_back(static_cast<int>(i % 50));
  for (Index i = 0; i < g.rows(); ++i) gid.push_back(static_cast<int>(i % 50));
  for (auto _ : state) benchmark::DoNotOptimize(retrieval_metrics(q, g, qid, gid));
}
BENCHMARK(BM_RetrievalMetrics)->Arg(400)->Arg(2000)->Unit(benchmark::kMillisecond);

void BM_AttributeMetrics(benchmark::State& state) {
  Rng rng(4);
  PredictionSet p{Matrix(5000, 12), Matrix(5000, 12), TaskKind::multilabel};
  for (Index i = 0; i < p.scores.size(); ++i) {
    p.scores.data()[i] = rng.uniform();
    p.ground_truth.data()[i] = rng.bernoulli(0.3) ? 1.0 : 0.0;
  }
  for (auto _ : state) benchmark::DoNotOptimize(attribute_metrics(p));
}
BENCHMARK(BM_AttributeMetrics);

}  // namespace

BENCHMARK_MAIN();
