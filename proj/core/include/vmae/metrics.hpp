#pragma once

#include "vmae/autodiff.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace vmae {

enum class TaskKind { multilabel, multiclass, retrieval, segmentation };

struct PredictionSet {
  Matrix scores;        // [n, A] or [n, n_classes]
  Matrix ground_truth;  // multilabel: same shape as scores, 0/1; multiclass: [n, 1] class ids
  TaskKind task = TaskKind::multilabel;
};

// Named metric values in insertion order plus bookkeeping counters
// (zero-denominator cells, excluded queries).
class MetricReport {
 public:
  void set(const std::string& name, double value);
  std::optional<double> get(const std::string& name) const;
  double at(const std::string& name) const;  // throws InputError when absent
  void set_count(const std::string& name, long value);
  long count(const std::string& name) const;  // 0 when absent

  const std::vector<std::pair<std::string, double>>& values() const { return values_; }
  const std::vector<std::pair<std::string, long>>& counts() const { return counts_; }

  // One `name = value` line per metric, then per counter.
  std::string to_text() const;
  static MetricReport from_text(const std::string& text);
  void save(const std::filesystem::path& path) const;

  friend bool operator==(const MetricReport&, const MetricReport&) = default;

 private:
  std::vector<std::pair<std::string, double>> values_;
  std::vector<std::pair<std::string, long>> counts_;
};

// Label-based mA plus example-based accuracy, precision, recall and F1.
// A label is predicted positive when score > threshold. Zero-denominator
// cells contribute 0 and are tallied under `zero_division`.
MetricReport attribute_metrics(const PredictionSet& predictions, double threshold = 0.5);

// Top-1 accuracy and mean per-class accuracy over classes present in the labels.
MetricReport classification_metrics(const Matrix& scores, const std::vector<int>& labels);

// Cosine-similarity ranking of the gallery for every query; ties go to the
// lower gallery index. Queries without positives are excluded and counted
// under `excluded_queries`. Reports mAP and rank<k> for each k.
MetricReport retrieval_metrics(const Matrix& query, const Matrix& gallery, const std::vector<int>& query_ids,
                               const std::vector<int>& gallery_ids, const std::vector<int>& ks = {1, 5, 10});

// Confusion rows are ground truth, columns predictions. Classes absent from
// both are left out of mIoU and mAcc.
using ConfusionMatrix = std::vector<std::vector<std::int64_t>>;
MetricReport segmentation_metrics(const ConfusionMatrix& confusion);
ConfusionMatrix load_confusion(const std::filesystem::path& path);

// Score tables keyed by sample id: header `#id\t<col>\t<col>...`, then
// `id\tscore\tscore...` per row.
struct ScoreTable {
  std::vector<std::string> columns;
  std::vector<std::string> ids;
  Matrix scores;
};
void save_score_table(const ScoreTable& table, const std::filesystem::path& path);
ScoreTable load_score_table(const std::filesystem::path& path);

}  // namespace vmae
