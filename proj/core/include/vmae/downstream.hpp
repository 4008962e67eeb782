#pragma once

#include "vmae/dataio.hpp"
#include "vmae/metrics.hpp"
#include "vmae/optimizer.hpp"
#include "vmae/params.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace vmae {

enum class ProbeTask { attribute, fine_grained };

ProbeTask parse_probe_task(const std::string& name);  // "attribute" | "fine_grained"
std::string to_string(ProbeTask task);

struct ProbeConfig {
  ProbeTask task = ProbeTask::attribute;
  int epochs = 30;
  int batch_size = 32;
  double head_lr = 0.01;
  double encoder_lr = 0.0004;  // fine-tuning only
  double weight_decay = 0.0;
  double train_fraction = 0.8;
  double threshold = 0.5;
  std::uint64_t seed = 0;
};

// Mean of the encoder's patch tokens (CLS excluded) for the full, unmasked image.
RowVector pooled_features(const ModelParams& params, const ImageTensor& image);
Matrix pooled_features(const ModelParams& params, const Dataset& dataset);

// Deterministic split; both halves keep at least one record when n >= 2.
struct DataSplit {
  std::vector<int> train;
  std::vector<int> test;
};
DataSplit split_dataset(int n, double train_fraction, std::uint64_t seed);

struct ProbeResult {
  MetricReport report;   // test-split metrics
  ScoreTable test_scores;  // probabilities per test record
  Matrix head_w;
  RowVector head_b;
};

// Encoder frozen; a single linear head on standardized pooled features,
// trained with per-attribute binary cross-entropy or softmax cross-entropy.
ProbeResult linear_probe(const ModelParams& params, const Dataset& dataset, const ProbeConfig& config);
// Same head, encoder and patch embedding unfrozen.
ProbeResult finetune(const ModelParams& params, const Dataset& dataset, const ProbeConfig& config);

// Re-ID style evaluation: the first record of every identity with at least
// two records is a query, all other records form the gallery.
MetricReport retrieval_eval(const ModelParams& params, const Dataset& dataset, const std::vector<int>& ks = {1, 5, 10});

}  // namespace vmae
