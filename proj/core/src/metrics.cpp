#include "vmae/metrics.hpp"

#include "vmae/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace vmae {

namespace {

std::string fmt(double v) {
  char buf[40];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  return std::string(buf, end);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Ratio with the zero-denominator convention: 0, and the event is tallied.
double safe_div(double num, double den, long& zero_cells) {
  if (den == 0.0) {
    ++zero_cells;
    return 0.0;
  }
  return num / den;
}

}  // namespace

void MetricReport::set(const std::string& name, double value) {
  for (auto& [k, v] : values_) {
    if (k == name) {
      v = value;
      return;
    }
  }
  values_.emplace_back(name, value);
}

std::optional<double> MetricReport::get(const std::string& name) const {
  for (const auto& [k, v] : values_)
    if (k == name) return v;
  return std::nullopt;
}

double MetricReport::at(const std::string& name) const {
  if (auto v = get(name)) return *v;
  throw InputError("metric '" + name + "' not in report");
}

void MetricReport::set_count(const std::string& name, long value) {
  for (auto& [k, v] : counts_) {
    if (k == name) {
      v = value;
      return;
    }
  }
  counts_.emplace_back(name, value);
}

long MetricReport::count(const std::string& name) const {
  for (const auto& [k, v] : counts_)
    if (k == name) return v;
  return 0;
}

std::string MetricReport::to_text() const {
  std::ostringstream os;
  for (const auto& [k, v] : values_) os << k << " = " << fmt(v) << '\n';
  for (const auto& [k, v] : counts_) os << "count." << k << " = " << v << '\n';
  return os.str();
}

MetricReport MetricReport::from_text(const std::string& text) {
  MetricReport r;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("metric report line " + std::to_string(lineno) + " has no '='");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key.rfind("count.", 0) == 0) {
      long c = 0;
      auto [p, ec] = std::from_chars(val.data(), val.data() + val.size(), c);
      if (ec != std::errc() || p != val.data() + val.size())
        throw ParseError("metric report line " + std::to_string(lineno) + ": bad count");
      r.set_count(key.substr(6), c);
    } else {
      double d = 0;
      auto [p, ec] = std::from_chars(val.data(), val.data() + val.size(), d);
      if (ec != std::errc() || p != val.data() + val.size())
        throw ParseError("metric report line " + std::to_string(lineno) + ": bad value");
      r.set(key, d);
    }
  }
  return r;
}

void MetricReport::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out || !(out << to_text())) throw IoError("cannot write metric report " + path.string());
}

MetricReport attribute_metrics(const PredictionSet& p, double threshold) {
  if (p.task != TaskKind::multilabel) throw InputError("attribute_metrics needs a multilabel prediction set");
  if (p.scores.rows() != p.ground_truth.rows() || p.scores.cols() != p.ground_truth.cols())
    throw StructuralError("attribute_metrics: scores and ground truth shapes differ");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ParameterError("attribute_metrics: threshold must be in (0,1)");
  const Index n = p.scores.rows(), a = p.scores.cols();
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < a; ++j) {
      const double g = p.ground_truth(i, j);
      if (g != 0.0 && g != 1.0) throw InputError("attribute_metrics: ground truth must be 0 or 1");
    }
  if (n == 0 || a == 0) throw InputError("attribute_metrics: empty prediction set");

  long zero_cells = 0;
  double ma = 0.0;
  for (Index j = 0; j < a; ++j) {
    double tp = 0, fn = 0, tn = 0, fp = 0;
    for (Index i = 0; i < n; ++i) {
      const bool pred = p.scores(i, j) > threshold;
      const bool truth = p.ground_truth(i, j) == 1.0;
      tp += pred && truth;
      fn += !pred && truth;
      tn += !pred && !truth;
      fp += pred && !truth;
    }
    ma += 0.5 * (safe_div(tp, tp + fn, zero_cells) + safe_div(tn, tn + fp, zero_cells));
  }
  ma /= static_cast<double>(a);

  double acc = 0, prec = 0, rec = 0;
  for (Index i = 0; i < n; ++i) {
    double inter = 0, n_pred = 0, n_true = 0;
    for (Index j = 0; j < a; ++j) {
      const bool pred = p.scores(i, j) > threshold;
      const bool truth = p.ground_truth(i, j) == 1.0;
      inter += pred && truth;
      n_pred += pred;
      n_true += truth;
    }
    acc += safe_div(inter, n_pred + n_true - inter, zero_cells);
    prec += safe_div(inter, n_pred, zero_cells);
    rec += safe_div(inter, n_true, zero_cells);
  }
  acc /= static_cast<double>(n);
  prec /= static_cast<double>(n);
  rec /= static_cast<double>(n);
  const double f1 = safe_div(2.0 * prec * rec, prec + rec, zero_cells);

  MetricReport r;
  r.set("mA", ma);
  r.set("accuracy", acc);
  r.set("precision", prec);
  r.set("recall", rec);
  r.set("f1", f1);
  r.set_count("zero_division", zero_cells);
  return r;
}

MetricReport classification_metrics(const Matrix& scores, const std::vector<int>& labels) {
  if (static_cast<std::size_t>(scores.rows()) != labels.size())
    throw StructuralError("classification_metrics: one label per score row required");
  if (labels.empty()) throw InputError("classification_metrics: empty prediction set");
  const Index c = scores.cols();
  std::vector<double> hit(static_cast<std::size_t>(c), 0.0), seen(static_cast<std::size_t>(c), 0.0);
  double correct = 0;
  for (Index i = 0; i < scores.rows(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= c) throw InputError("classification_metrics: label " + std::to_string(y) + " out of range");
    Index best = 0;
    for (Index k = 1; k < c; ++k)
      if (scores(i, k) > scores(i, best)) best = k;
    seen[static_cast<std::size_t>(y)] += 1;
    if (best == y) {
      correct += 1;
      hit[static_cast<std::size_t>(y)] += 1;
    }
  }
  double macc = 0;
  int present = 0;
  for (std::size_t k = 0; k < hit.size(); ++k) {
    if (seen[k] == 0) continue;
    macc += hit[k] / seen[k];
    ++present;
  }
  MetricReport r;
  r.set("accuracy", correct / static_cast<double>(labels.size()));
  r.set("mAcc", macc / present);
  return r;
}

MetricReport retrieval_metrics(const Matrix& query, const Matrix& gallery, const std::vector<int>& query_ids,
                               const std::vector<int>& gallery_ids, const std::vector<int>& ks) {
  if (query.cols() != gallery.cols()) throw StructuralError("retrieval_metrics: embedding dimensions differ");
  if (static_cast<std::size_t>(query.rows()) != query_ids.size() ||
      static_cast<std::size_t>(gallery.rows()) != gallery_ids.size())
    throw StructuralError("retrieval_metrics: one id per embedding row required");
  for (int k : ks)
    if (k < 1) throw ParameterError("retrieval_metrics: rank cutoffs must be >= 1");

  auto unit_rows = [](const Matrix& m) {
    Matrix out = m;
    for (Index i = 0; i < out.rows(); ++i) {
      const double norm = out.row(i).norm();
      if (norm > 0.0) out.row(i) /= norm;
    }
    return out;
  };
  const Matrix sim = unit_rows(query) * unit_rows(gallery).transpose();
  const Index ng = gallery.rows();

  double ap_sum = 0;
  std::vector<double> hits(ks.size(), 0.0);
  long used = 0, excluded = 0;
  std::vector<Index> order(static_cast<std::size_t>(ng));
  for (Index q = 0; q < query.rows(); ++q) {
    const int qid = query_ids[static_cast<std::size_t>(q)];
    const long positives = std::count(gallery_ids.begin(), gallery_ids.end(), qid);
    if (positives == 0) {
      ++excluded;
      continue;
    }
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return sim(q, a) > sim(q, b); });
    double ap = 0;
    long found = 0;
    Index first_hit = -1;
    for (Index r = 0; r < ng; ++r) {
      if (gallery_ids[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])] != qid) continue;
      ++found;
      if (first_hit < 0) first_hit = r;
      ap += static_cast<double>(found) / static_cast<double>(r + 1);
    }
    ap_sum += ap / static_cast<double>(positives);
    for (std::size_t i = 0; i < ks.size(); ++i) hits[i] += first_hit < ks[i] ? 1.0 : 0.0;
    ++used;
  }
  MetricReport r;
  const double denom = used > 0 ? static_cast<double>(used) : 1.0;
  r.set("mAP", ap_sum / denom);
  for (std::size_t i = 0; i < ks.size(); ++i) r.set("rank" + std::to_string(ks[i]), hits[i] / denom);
  r.set_count("excluded_queries", excluded);
  r.set_count("queries", used);
  return r;
}

MetricReport segmentation_metrics(const ConfusionMatrix& confusion) {
  const std::size_t c = confusion.size();
  if (c == 0) throw InputError("segmentation_metrics: empty confusion matrix");
  for (const auto& row : confusion) {
    if (row.size() != c) throw InputError("segmentation_metrics: confusion matrix is not square");
    for (auto v : row)
      if (v < 0) throw InputError("segmentation_metrics: negative confusion count");
  }
  long zero_cells = 0;
  double iou_sum = 0, acc_sum = 0;
  int included = 0;
  for (std::size_t k = 0; k < c; ++k) {
    double truth = 0, pred = 0;
    for (std::size_t j = 0; j < c; ++j) {
      truth += static_cast<double>(confusion[k][j]);
      pred += static_cast<double>(confusion[j][k]);
    }
    if (truth == 0 && pred == 0) continue;
    const double tp = static_cast<double>(confusion[k][k]);
    const double fn = truth - tp, fp = pred - tp;
    iou_sum += tp / (tp + fn + fp);
    acc_sum += safe_div(tp, tp + fn, zero_cells);
    ++included;
  }
  MetricReport r;
  r.set("mIoU", included > 0 ? iou_sum / included : 0.0);
  r.set("mAcc", included > 0 ? acc_sum / included : 0.0);
  r.set_count("classes", included);
  r.set_count("zero_division", zero_cells);
  return r;
}

ConfusionMatrix load_confusion(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open confusion matrix " + path.string());
  ConfusionMatrix m;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    for (char& ch : line)
      if (ch == ',') ch = ' ';
    if (trim(line).empty() || trim(line)[0] == '#') continue;
    std::istringstream ls(line);
    std::vector<std::int64_t> row;
    std::string tok;
    while (ls >> tok) {
      std::int64_t v = 0;
      auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc() || p != tok.data() + tok.size())
        throw ParseError(path.string() + ": line " + std::to_string(lineno) + " has a non-integer entry");
      row.push_back(v);
    }
    m.push_back(std::move(row));
  }
  return m;
}

void save_score_table(const ScoreTable& table, const std::filesystem::path& path) {
  if (static_cast<Index>(table.ids.size()) != table.scores.rows() ||
      static_cast<Index>(table.columns.size()) != table.scores.cols())
    throw StructuralError("score table ids/columns disagree with the score matrix");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write score table " + path.string());
  out << "#id";
  for (const auto& c : table.columns) out << '\t' << c;
  out << '\n';
  for (std::size_t i = 0; i < table.ids.size(); ++i) {
    out << table.ids[i];
    for (Index k = 0; k < table.scores.cols(); ++k) out << '\t' << fmt(table.scores(static_cast<Index>(i), k));
    out << '\n';
  }
  if (!out) throw IoError("failed writing score table " + path.string());
}

ScoreTable load_score_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open score table " + path.string());
  auto split = [](const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
      const auto tab = line.find('\t', start);
      out.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    return out;
  };
  ScoreTable t;
  std::string line;
  if (!std::getline(in, line) || line.rfind("#id", 0) != 0) throw ParseError(path.string() + ": missing '#id' header");
  auto head = split(line);
  t.columns.assign(head.begin() + 1, head.end());
  std::vector<std::vector<double>> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto fields = split(line);
    if (fields.size() != t.columns.size() + 1)
      throw ParseError(path.string() + ": line " + std::to_string(lineno) + " has " + std::to_string(fields.size()) +
                       " fields, expected " + std::to_string(t.columns.size() + 1));
    std::vector<double> row;
    for (std::size_t k = 1; k < fields.size(); ++k) {
      double v = 0;
      auto [p, ec] = std::from_chars(fields[k].data(), fields[k].data() + fields[k].size(), v);
      if (ec != std::errc() || p != fields[k].data() + fields[k].size())
        throw ParseError(path.string() + ": line " + std::to_string(lineno) + " has a bad score");
      row.push_back(v);
    }
    t.ids.push_back(fields[0]);
    rows.push_back(std::move(row));
  }
  t.scores.resize(static_cast<Index>(rows.size()), static_cast<Index>(t.columns.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t k = 0; k < rows[i].size(); ++k) t.scores(static_cast<Index>(i), static_cast<Index>(k)) = rows[i][k];
  return t;
}

}  // namespace vmae
