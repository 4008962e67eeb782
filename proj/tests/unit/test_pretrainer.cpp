#include "test_support.hpp"

#include "vmae/checkpoint.hpp"
#include "vmae/errors.hpp"
#include "vmae/pretrainer.hpp"

#include <doctest.h>

#include <fstream>
#include <iterator>
#include <limits>

using namespace vmae;
using vmae::testing::TempDir;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

PretrainOptions tiny_options(int epochs, int batch) {
  PretrainOptions o;
  o.model = tiny_model_config();
  o.optim.lr = 1e-3;
  o.epochs = epochs;
  o.batch_size = batch;
  o.seed = 7;
  return o;
}

}  // namespace

TEST_CASE("a zero learning rate leaves parameters bit-identical") {
  TempDir dir("pt_lr0");
  const Dataset ds = vmae::testing::synthetic_dataset(dir / "data", 4, 1, 0.5);
  StubEmbedder emb(1, 8);
  TrainState state = TrainState::fresh(tiny_model_config(), 3);
  const ModelParams before = state.params;
  StepContext ctx{{}, {}, 0.0, &emb};
  for (int i = 0; i < 3; ++i) {
    const StepResult r = train_step(state, to_loss_batch(make_batches(ds, 2, 3, i)[0], step_mask_seed(3, i)), ctx);
    CHECK_FALSE(r.faulted);
    CHECK(r.grad_norm > 0.0);
  }
  CHECK(state.step == 3);
  for (std::size_t i = 0; i < before.tensors().size(); ++i) CHECK(state.params.tensors()[i].value == before.tensors()[i].value);
}

TEST_CASE("five steps from the same seed give identical loss sequences") {
  TempDir dir("pt_det");
  const Dataset ds = vmae::testing::synthetic_dataset(dir / "data", 10, 2, 0.5);
  StubEmbedder emb(2, 8);
  auto run = [&] {
    TrainState state = TrainState::fresh(tiny_model_config(), 11);
    StepContext ctx{{}, {}, 1e-3, &emb};
    std::vector<LossBreakdown> seq;
    const auto batches = make_batches(ds, 2, 11, 0);
    for (long s = 0; s < 5; ++s) {
      seq.push_back(train_step(state, to_loss_batch(batches[static_cast<std::size_t>(s)], step_mask_seed(11, s)), ctx).losses);
    }
    return seq;
  };
  const auto a = run(), b = run();
  CHECK(a == b);
  CHECK(a[0].total != a[4].total);
}

TEST_CASE("non-finite losses are counted as faults and skip the update") {
  TempDir dir("pt_fault");
  const Dataset ds = vmae::testing::synthetic_dataset(dir / "data", 2, 3, 0.0);
  StubEmbedder emb(3, 8);
  TrainState state = TrainState::fresh(tiny_model_config(), 1);
  state.params.at("pixel_head.b")(0, 0) = std::numeric_limits<double>::infinity();
  const ModelParams before = state.params;
  StepContext ctx{{}, {}, 1e-3, &emb};
  const StepResult r = train_step(state, to_loss_batch(make_batches(ds, 2, 1, 0)[0], 1), ctx);
  CHECK(r.faulted);
  CHECK(state.faults == 1);
  CHECK(state.step == 0);
  CHECK(state.optimizer.updates == 0);
  CHECK(state.params.at("enc.0.attn.qkv.w") == before.at("enc.0.attn.qkv.w"));
  ctx.embedder = nullptr;
  CHECK_THROWS_AS(train_step(state, to_loss_batch(make_batches(ds, 2, 1, 0)[0], 1), ctx), ParameterError);
}

TEST_CASE("steps per epoch follow the batch count") {
  TempDir dir("pt_steps");
  const Dataset ds = vmae::testing::synthetic_dataset(dir / "data", 4, 4, 0.5);
  StubEmbedder emb(4, 8);
  const PretrainResult r = pretrain(tiny_options(1, 2), ds, dir / "out", emb);
  CHECK(r.steps == 2);
  CHECK(r.completed);
  CHECK(r.history.size() == 2);
  CHECK(std::filesystem::exists(dir / "out" / "final.vmae"));
  CHECK(std::filesystem::exists(dir / "out" / "checkpoints" / "epoch_0001.vmae"));

  PretrainOptions five = tiny_options(2, 3);
  CHECK(planned_total_steps(five, 5) == 4);
  five.max_steps = 3;
  CHECK(planned_total_steps(five, 5) == 3);
}

TEST_CASE("metrics lines log disabled losses as zero") {
  LossBreakdown b;
  b.l_r = 0.5;
  b.l_mim = 0.25;
  b.l_cls = 1.0;
  b.l_cf = 2.0;
  b.l_cs = 3.0;
  b.weights = effective_weights({}, LossToggles{true, false, true, false, false});
  b.total = weighted_total(b, b.weights);
  CHECK(format_metrics_line(12, b, 0.001) == "12,0.5,0,1,0,0,2.02,0.001");
}

TEST_CASE("an interrupted run resumes onto the uninterrupted trajectory") {
  TempDir dir("pt_resume");
  const Dataset ds = vmae::testing::synthetic_dataset(dir / "data", 6, 5, 0.5);
  StubEmbedder emb(5, 8);
  const PretrainOptions full = tiny_options(3, 2);
  pretrain(full, ds, dir / "full", emb);

  PretrainOptions halted = full;
  halted.halt_after_epochs = 1;
  const PretrainResult first = pretrain(halted, ds, dir / "split", emb);
  CHECK_FALSE(first.completed);
  CHECK(first.steps == 3);
  CHECK_FALSE(std::filesystem::exists(dir / "split" / "final.vmae"));
  const PretrainResult second = pretrain(full, ds, dir / "split", emb);
  CHECK(second.completed);
  CHECK(second.steps == 9);
  CHECK(slurp(dir / "full" / "metrics.csv") == slurp(dir / "split" / "metrics.csv"));
  CHECK(slurp(dir / "full" / "final.vmae") == slurp(dir / "split" / "final.vmae"));

  PretrainOptions wrong_seed = full;
  wrong_seed.seed = 8;
  CHECK_THROWS_AS(pretrain(wrong_seed, ds, dir / "split", emb), ConfigError);
}

TEST_CASE("only the newest checkpoints are kept") {
  TempDir dir("pt_keep");
  const Dataset ds = vmae::testing::synthetic_dataset(dir / "data", 2, 6, 0.5);
  StubEmbedder emb(6, 8);
  PretrainOptions o = tiny_options(4, 2);
  o.keep_checkpoints = 2;
  pretrain(o, ds, dir / "out", emb);
  const auto ck = dir / "out" / "checkpoints";
  CHECK_FALSE(std::filesystem::exists(ck / "epoch_0002.vmae"));
  CHECK(std::filesystem::exists(ck / "epoch_0003.vmae"));
  CHECK(std::filesystem::exists(ck / "epoch_0004.vmae"));
  CHECK(load_checkpoint(ck / "epoch_0004.vmae").epoch == 4);
}

TEST_CASE("an unusable output directory fails before training") {
  TempDir dir("pt_io");
  const Dataset ds = vmae::testing::synthetic_dataset(dir / "data", 2, 7, 0.5);
  StubEmbedder emb(7, 8);
  std::ofstream(dir / "plain_file") << "x";
  CHECK_THROWS_AS(pretrain(tiny_options(1, 2), ds, dir / "plain_file" / "out", emb), IoError);
  StubEmbedder wide(7, 16);
  CHECK_THROWS_AS(pretrain(tiny_options(1, 2), ds, dir / "out", wide), ConfigError);
}

TEST_CASE("training never changes the frozen embedder") {
  TempDir dir("pt_frozen");
  const Dataset ds = vmae::testing::synthetic_dataset(dir / "data", 4, 8, 1.0);
  StubEmbedder emb(8, 8);
  std::vector<RowVector> before;
  for (const auto& s : ds.samples) {
    before.push_back(emb.embed_image({&s.image, s.id, s.tags}));
    before.push_back(emb.embed_text(*s.caption));
  }
  pretrain(tiny_options(3, 2), ds, dir / "out", emb);
  std::size_t k = 0;
  for (const auto& s : ds.samples) {
    CHECK(emb.embed_image({&s.image, s.id, s.tags}) == before[k++]);
    CHECK(emb.embed_text(*s.caption) == before[k++]);
  }
}
