#include "vmae/downstream.hpp"

#include "vmae/backbone.hpp"
#include "vmae/errors.hpp"
#include "vmae/random.hpp"
#include "vmae/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace vmae {

ProbeTask parse_probe_task(const std::string& name) {
  if (name == "attribute") return ProbeTask::attribute;
  if (name == "fine_grained" || name == "fine-grained") return ProbeTask::fine_grained;
  throw ConfigError("unknown task '" + name + "' (expected attribute or fine_grained)");
}

std::string to_string(ProbeTask task) { return task == ProbeTask::attribute ? "attribute" : "fine_grained"; }

RowVector pooled_features(const ModelParams& params, const ImageTensor& image) {
  const auto& cfg = params.config();
  const PatchSequence patches = patchify(image, cfg.patch_size);
  const Matrix enc = encode(embed_patches(patches, full_visibility(patches.count()), params), params);
  return enc.bottomRows(enc.rows() - 1).colwise().mean();
}

Matrix pooled_features(const ModelParams& params, const Dataset& dataset) {
  Matrix out(dataset.size(), params.config().d_enc);
  for (int i = 0; i < dataset.size(); ++i) out.row(i) = pooled_features(params, dataset.samples[static_cast<std::size_t>(i)].image);
  return out;
}

DataSplit split_dataset(int n, double train_fraction, std::uint64_t seed) {
  if (n < 2) throw InputError("split_dataset: need at least two records");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ParameterError("train_fraction must lie in (0,1)");
  const auto perm = seeded_permutation(n, mix_seed(seed, 0x5b1d));
  int n_train = static_cast<int>(std::nearbyint(train_fraction * n));
  n_train = std::clamp(n_train, 1, n - 1);
  DataSplit s;
  s.train.assign(perm.begin(), perm.begin() + n_train);
  s.test.assign(perm.begin() + n_train, perm.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

namespace {

struct Targets {
  Matrix y;  // multilabel: [n, A] 0/1; multiclass: one-hot [n, C]
  std::vector<int> labels;
  std::vector<std::string> columns;
};

Targets make_targets(const Dataset& ds, ProbeTask task) {
  Targets t;
  const int n = ds.size();
  if (task == ProbeTask::attribute) {
    const int a = static_cast<int>(ds.manifest.attribute_names.size());
    if (a == 0) throw ConfigError("attribute task needs attribute labels, the manifest declares none");
    t.y.resize(n, a);
    for (int i = 0; i < n; ++i) {
      const auto& bits = ds.samples[static_cast<std::size_t>(i)].attributes;
      if (static_cast<int>(bits.size()) != a) throw ConfigError("record " + std::to_string(i + 1) + " has the wrong attribute width");
      for (int j = 0; j < a; ++j) t.y(i, j) = bits[static_cast<std::size_t>(j)];
    }
    t.columns = ds.manifest.attribute_names;
  } else {
    int classes = 0;
    for (const auto& s : ds.samples) {
      if (s.fine_label < 0) throw ConfigError("fine_grained task needs nonnegative class labels");
      classes = std::max(classes, s.fine_label + 1);
    }
    t.y = Matrix::Zero(n, classes);
    for (int i = 0; i < n; ++i) {
      const int c = ds.samples[static_cast<std::size_t>(i)].fine_label;
      t.y(i, c) = 1.0;
      t.labels.push_back(c);
    }
    for (int c = 0; c < classes; ++c) t.columns.push_back("class_" + std::to_string(c));
  }
  return t;
}

struct Standardizer {
  RowVector mean;
  RowVector inv_std;
  Matrix apply(const Matrix& x) const {
    return (x.rowwise() - mean).array().rowwise() * inv_std.array();
  }
};

Standardizer fit_standardizer(const Matrix& feats, const std::vector<int>& rows) {
  Matrix sub(static_cast<Index>(rows.size()), feats.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) sub.row(static_cast<Index>(i)) = feats.row(rows[i]);
  Standardizer s;
  s.mean = sub.colwise().mean();
  const Matrix centered = sub.rowwise() - s.mean;
  const RowVector var = centered.array().square().colwise().mean();
  s.inv_std.resize(feats.cols());
  for (Index k = 0; k < feats.cols(); ++k) {
    const double sd = std::sqrt(var(k));
    s.inv_std(k) = sd > 1e-12 ? 1.0 / sd : 1.0;
  }
  return s;
}

Matrix rows_of(const Matrix& m, const std::vector<int>& rows) {
  Matrix out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = m.row(rows[i]);
  return out;
}

Matrix probabilities(const Matrix& logits, ProbeTask task) {
  if (task == ProbeTask::attribute) return (1.0 / (1.0 + (-logits.array()).exp())).matrix();
  Matrix p = logits;
  for (Index i = 0; i < p.rows(); ++i) {
    p.row(i).array() -= p.row(i).maxCoeff();
    p.row(i) = p.row(i).array().exp().matrix();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

struct Head {
  Matrix w;
  RowVector b;
  Matrix mw, vw, mb, vb;
  long t = 0;

  Head(Index in, Index out)
      : w(Matrix::Zero(in, out)), b(RowVector::Zero(out)), mw(Matrix::Zero(in, out)), vw(Matrix::Zero(in, out)),
        mb(Matrix::Zero(1, out)), vb(Matrix::Zero(1, out)) {}

  void step(const Matrix& gw, const Matrix& gb, double lr, const AdamWConfig& cfg) {
    ++t;
    adamw_step(w, mw, vw, gw, t, lr, cfg);
    Matrix bm = b;
    adamw_step(bm, mb, vb, gb, t, lr, cfg);
    b = bm.row(0);
  }
};

std::vector<std::vector<int>> epoch_batches(const std::vector<int>& train, int batch_size, std::uint64_t seed, int epoch) {
  const auto perm = seeded_permutation(static_cast<int>(train.size()), mix_seed(seed, 0xba7c, static_cast<std::uint64_t>(epoch)));
  std::vector<std::vector<int>> out;
  for (std::size_t s = 0; s < perm.size(); s += static_cast<std::size_t>(batch_size)) {
    std::vector<int> b;
    for (std::size_t k = s; k < std::min(perm.size(), s + static_cast<std::size_t>(batch_size)); ++k)
      b.push_back(train[static_cast<std::size_t>(perm[k])]);
    out.push_back(std::move(b));
  }
  return out;
}

void check_config(const ProbeConfig& c, const Dataset& ds) {
  if (ds.size() < 2) throw InputError("probe needs at least two records");
  if (c.epochs < 0) throw ConfigError("probe epochs must be >= 0");
  if (c.batch_size < 1) throw ConfigError("probe batch_size must be >= 1");
  if (!(c.head_lr >= 0.0) || !(c.encoder_lr >= 0.0)) throw ConfigError("probe learning rates must be >= 0");
}

ProbeResult report_for(const Matrix& logits_test, const Targets& targets, const DataSplit& split, const Dataset& ds,
                       const ProbeConfig& cfg) {
  ProbeResult r;
  const Matrix probs = probabilities(logits_test, cfg.task);
  if (cfg.task == ProbeTask::attribute) {
    PredictionSet ps{probs, rows_of(targets.y, split.test), TaskKind::multilabel};
    r.report = attribute_metrics(ps, cfg.threshold);
  } else {
    std::vector<int> labels;
    for (int i : split.test) labels.push_back(targets.labels[static_cast<std::size_t>(i)]);
    r.report = classification_metrics(probs, labels);
  }
  r.report.set_count("train_records", static_cast<long>(split.train.size()));
  r.report.set_count("test_records", static_cast<long>(split.test.size()));
  r.test_scores.columns = targets.columns;
  for (int i : split.test) r.test_scores.ids.push_back(ds.samples[static_cast<std::size_t>(i)].id);
  r.test_scores.scores = probs;
  return r;
}

}  // namespace

ProbeResult linear_probe(const ModelParams& params, const Dataset& dataset, const ProbeConfig& config) {
  check_config(config, dataset);
  const Targets targets = make_targets(dataset, config.task);
  const DataSplit split = split_dataset(dataset.size(), config.train_fraction, config.seed);
  const Matrix feats = pooled_features(params, dataset);
  const Standardizer st = fit_standardizer(feats, split.train);
  const Matrix x = st.apply(feats);

  AdamWConfig opt;
  opt.weight_decay = config.weight_decay;
  Head head(x.cols(), targets.y.cols());
  for (int e = 0; e < config.epochs; ++e) {
    for (const auto& b : epoch_batches(split.train, config.batch_size, config.seed, e)) {
      const Matrix xb = rows_of(x, b);
      const Matrix logits = (xb * head.w).rowwise() + head.b;
      const Matrix g = (probabilities(logits, config.task) - rows_of(targets.y, b)) / static_cast<double>(b.size());
      head.step(xb.transpose() * g, g.colwise().sum(), config.head_lr, opt);
    }
  }
  const Matrix logits = (rows_of(x, split.test) * head.w).rowwise() + head.b;
  ProbeResult r = report_for(logits, targets, split, dataset, config);
  r.head_w = head.w;
  r.head_b = head.b;
  return r;
}

ProbeResult finetune(const ModelParams& initial, const Dataset& dataset, const ProbeConfig& config) {
  check_config(config, dataset);
  const Targets targets = make_targets(dataset, config.task);
  const DataSplit split = split_dataset(dataset.size(), config.train_fraction, config.seed);
  ModelParams params = initial;
  const Standardizer st = fit_standardizer(pooled_features(params, dataset), split.train);
  const auto& cfg = params.config();
  std::vector<PatchSequence> patches;
  for (const auto& s : dataset.samples) patches.push_back(patchify(s.image, cfg.patch_size));
  const MaskPlan full = full_visibility(cfg.n_patches());
  std::vector<int> patch_rows(static_cast<std::size_t>(cfg.n_patches()));
  for (int i = 0; i < cfg.n_patches(); ++i) patch_rows[static_cast<std::size_t>(i)] = i + 1;

  AdamWConfig opt;
  opt.weight_decay = config.weight_decay;
  AdamWState enc_state = AdamWState::zeros_like(params);
  Head head(cfg.d_enc, targets.y.cols());
  for (int e = 0; e < config.epochs; ++e) {
    for (const auto& b : epoch_batches(split.train, config.batch_size, config.seed, e)) {
      ParamGraph g(params, true);
      ad::Var w = ad::leaf(head.w);
      ad::Var bias = ad::leaf(Matrix(head.b));
      ad::Var loss;
      for (int i : b) {
        const auto idx = static_cast<std::size_t>(i);
        ad::Var enc = graph::encoder(g, graph::embed_image_tokens(g, patches[idx], full));
        ad::Var f = ad::mean_rows(ad::gather_rows(enc, patch_rows));
        ad::Var z = ad::mul(ad::sub(f, ad::constant(st.mean)), ad::constant(st.inv_std));
        ad::Var logits = ad::add(ad::matmul(z, w), bias);
        const Matrix y = targets.y.row(i);
        ad::Var li = config.task == ProbeTask::attribute
                         ? ad::bce_with_logits_sum(logits, y)
                         : ad::scale(ad::sum(ad::mul(ad::log_softmax_rows(logits), ad::constant(y))), -1.0);
        loss = loss.valid() ? ad::add(loss, li) : li;
      }
      loss = ad::scale(loss, 1.0 / static_cast<double>(b.size()));
      ad::backward(loss);
      Gradients grads = g.gradients();
      if (!all_finite(grads) || !w.grad().allFinite() || !bias.grad().allFinite())
        throw NumericError("fine-tuning produced a non-finite gradient");
      adamw_update(params, enc_state, grads, config.encoder_lr, opt);
      head.step(w.grad(), bias.grad(), config.head_lr, opt);
    }
  }
  const Matrix x = st.apply(pooled_features(params, dataset));
  const Matrix logits = (rows_of(x, split.test) * head.w).rowwise() + head.b;
  ProbeResult r = report_for(logits, targets, split, dataset, config);
  r.head_w = head.w;
  r.head_b = head.b;
  return r;
}

MetricReport retrieval_eval(const ModelParams& params, const Dataset& dataset, const std::vector<int>& ks) {
  std::map<int, std::vector<int>> by_identity;
  for (int i = 0; i < dataset.size(); ++i) by_identity[dataset.samples[static_cast<std::size_t>(i)].identity].push_back(i);
  std::vector<int> queries, gallery;
  for (const auto& [id, members] : by_identity) {
    if (members.size() >= 2) {
      queries.push_back(members.front());
      gallery.insert(gallery.end(), members.begin() + 1, members.end());
    } else {
      gallery.push_back(members.front());
    }
  }
  if (queries.empty()) throw InputError("retrieval_eval: no identity has two or more records");
  std::sort(gallery.begin(), gallery.end());
  const Matrix feats = pooled_features(params, dataset);
  std::vector<int> qids, gids;
  for (int i : queries) qids.push_back(dataset.samples[static_cast<std::size_t>(i)].identity);
  for (int i : gallery) gids.push_back(dataset.samples[static_cast<std::size_t>(i)].identity);
  return retrieval_metrics(rows_of(feats, queries), rows_of(feats, gallery), qids, gids, ks);
}

}  // namespace vmae
