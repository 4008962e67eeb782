#include "vmae/semantic_prior.hpp"

#include "vmae/errors.hpp"
#include "vmae/random.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>

namespace vmae {

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

RowVector unit_or_zero(RowVector v) {
  const double n = v.norm();
  if (n > 0.0) v /= n;
  return v;
}

}  // namespace

std::vector<std::string> tokenize_words(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else if (!current.empty()) {
      words.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

StubEmbedder::StubEmbedder(std::uint64_t seed, int sem_dim) : seed_(seed), dim_(sem_dim) {
  if (sem_dim < 2) throw ParameterError("stub embedder needs sem_dim >= 2");
  Rng rng(mix_seed(seed, 0x5717B));
  projection_.resize(kThumbSide * kThumbSide, sem_dim);
  const double s = 1.0 / kThumbSide;
  for (Index i = 0; i < projection_.size(); ++i) projection_.data()[i] = rng.normal() * s;
}

RowVector StubEmbedder::bag_of_words(const std::vector<std::string>& words) const {
  RowVector v = RowVector::Zero(dim_);
  for (const auto& w : words) {
    const std::uint64_t base = mix_seed(seed_, fnv1a(w));
    for (int k = 0; k < kWordProbes; ++k) {
      const std::uint64_t h = mix_seed(base, static_cast<std::uint64_t>(k));
      const auto slot = static_cast<Index>(h % static_cast<std::uint64_t>(dim_));
      v(slot) += ((h >> 32) & 1u) ? 1.0 : -1.0;
    }
  }
  return v;
}

RowVector StubEmbedder::embed_image(const ImageRef& ref) const {
  RowVector pixel_code = RowVector::Zero(dim_);
  if (ref.image != nullptr && !ref.image->empty()) {
    const ImageTensor gray = to_grayscale(*ref.image);
    const int h = gray.height();
    const int w = gray.width();
    RowVector thumb(kThumbSide * kThumbSide);
    for (int i = 0; i < kThumbSide; ++i) {
      const int r0 = i * h / kThumbSide;
      const int r1 = std::max(r0 + 1, (i + 1) * h / kThumbSide);
      for (int j = 0; j < kThumbSide; ++j) {
        const int c0 = j * w / kThumbSide;
        const int c1 = std::max(c0 + 1, (j + 1) * w / kThumbSide);
        double acc = 0.0;
        for (int r = r0; r < r1; ++r)
          for (int c = c0; c < c1; ++c) acc += gray.at(r, c, 0);
        thumb(i * kThumbSide + j) = acc / ((r1 - r0) * (c1 - c0));
      }
    }
    thumb.array() -= thumb.mean();
    pixel_code = unit_or_zero(thumb * projection_);
  }
  std::vector<std::string> tag_words;
  for (const auto& t : ref.tags) {
    for (auto& w : tokenize_words(t)) tag_words.push_back(std::move(w));
  }
  const RowVector tag_code = unit_or_zero(bag_of_words(tag_words));
  RowVector v = 0.5 * pixel_code + tag_code;
  if (!(v.norm() > 0.0)) v = bag_of_words({"<blank-image>"});
  return unit_or_zero(v);
}

RowVector StubEmbedder::embed_text(std::string_view text) const {
  auto words = tokenize_words(text);
  if (words.empty()) words.emplace_back("<empty-text>");
  RowVector v = bag_of_words(words);
  // Hash collisions can cancel exactly; fall back to a fixed marker.
  if (!(v.norm() > 0.0)) v = bag_of_words({"<cancelled-text>"});
  return unit_or_zero(v);
}

std::unique_ptr<FrozenEmbedder> stub_embedder(std::uint64_t seed, int sem_dim) {
  return std::make_unique<StubEmbedder>(seed, sem_dim);
}

int TextEmbeddingBank::find(std::string_view id) const {
  const auto it = index_.find(std::string(id));
  return it == index_.end() ? -1 : it->second;
}

void TextEmbeddingBank::rebuild_index() {
  index_.clear();
  for (std::size_t i = 0; i < ids.size(); ++i) index_.emplace(ids[i], static_cast<int>(i));
}

FileBankEmbedder::FileBankEmbedder(TextEmbeddingBank bank) : bank_(std::move(bank)) {
  bank_.rebuild_index();
}

RowVector FileBankEmbedder::embed_image(const ImageRef& ref) const {
  const int row = bank_.find(std::string(kImageKeyPrefix) + ref.id);
  if (row < 0) throw InputError("embedding bank has no image record for '" + ref.id + "'");
  return bank_.vectors.row(row);
}

RowVector FileBankEmbedder::embed_text(std::string_view text) const {
  const int row = bank_.find(std::string(kTextKeyPrefix) + std::string(text));
  if (row < 0) throw InputError("embedding bank has no text record for '" + std::string(text) + "'");
  return bank_.vectors.row(row);
}

double feature_align_loss(const RowVector& f_global, const RowVector& vc, const Matrix& sem_head) {
  return graph::feature_align_loss(ad::constant(Matrix(f_global)), vc, ad::constant(sem_head))
      .scalar();
}

RowVector similarity_distribution(const RowVector& f, const Matrix& W, double tau) {
  if (!(tau > 0.0)) throw ParameterError("temperature must be positive");
  if (W.rows() < 1) throw StructuralError("similarity distribution over an empty bank");
  if (W.cols() != f.cols()) throw StructuralError("feature and bank dimensions differ");
  RowVector logits = (W * f.transpose()).transpose() / tau;
  logits.array() -= logits.maxCoeff();
  RowVector s = logits.array().exp();
  s /= s.sum();
  // Very sharp distributions underflow; keep every entry strictly positive.
  return s.cwiseMax(std::numeric_limits<double>::min());
}

ConsistencyTerms consistency_loss(const RowVector& s_clip, const RowVector& s_mae) {
  if (s_clip.size() != s_mae.size()) throw StructuralError("distributions have different support");
  ConsistencyTerms t;
  for (Index j = 0; j < s_clip.size(); ++j) {
    const double p = s_clip(j);
    const double q = s_mae(j);
    if (p > 0.0) {
      if (q > 0.0) {
        t.kl += p * (std::log(p) - std::log(q));
      } else {
        t.fault = true;
      }
    }
    if (q > 0.0) t.entropy -= q * std::log(q);
  }
  // KL between distributions is nonnegative; anything below 0 is rounding.
  t.kl = t.fault ? std::numeric_limits<double>::infinity() : std::max(t.kl, 0.0);
  t.total = t.kl + t.entropy;
  return t;
}

namespace graph {

ad::Var feature_align_loss(const ad::Var& f_global, const RowVector& vc, const ad::Var& sem_head) {
  if (f_global.rows() != 1 || f_global.cols() != sem_head.rows()) {
    throw StructuralError("feature_align_loss: feature width does not match the semantic head");
  }
  if (vc.cols() != sem_head.cols()) {
    throw StructuralError("feature_align_loss: embedder dimension does not match the semantic head");
  }
  ad::Var f_unit = ad::l2_normalize_rows(ad::matmul(f_global, sem_head));
  ad::Var v_unit = ad::l2_normalize_rows(ad::constant(Matrix(vc)));
  return ad::sum(ad::square(ad::sub(f_unit, v_unit)));
}

ConsistencyGraph consistency_loss(const ad::Var& f_unit, const Matrix& W, const RowVector& vc_unit,
                                  double tau) {
  if (!(tau > 0.0)) throw ParameterError("temperature must be positive");
  const Matrix wt = W.transpose();
  ad::Var logits = ad::scale(ad::matmul(f_unit, ad::constant(wt)), 1.0 / tau);
  ad::Var log_q = ad::log_softmax_rows(logits);
  ad::Var q = ad::softmax_rows(logits);

  const RowVector p = similarity_distribution(vc_unit, W, tau);
  Matrix p_log_p = Matrix::Zero(1, p.cols());
  for (Index j = 0; j < p.cols(); ++j) {
    if (p(j) > 0.0) p_log_p(0, j) = p(j) * std::log(p(j));
  }
  // KL = sum p log p - sum p log q
  ad::Var cross = ad::sum(ad::mul(ad::constant(Matrix(p)), log_q));
  ad::Var kl = ad::sub(ad::constant_scalar(p_log_p.sum()), cross);
  ad::Var entropy = ad::scale(ad::sum(ad::mul(q, log_q)), -1.0);
  return {ad::add(kl, entropy), kl, entropy};
}

}  // namespace graph
}  // namespace vmae
