#pragma once

#include "vmae/autodiff.hpp"
#include "vmae/image.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace vmae {

enum class EmbedderKind { stub, file_bank };

// What a frozen embedder may look at for one image. `tags` are attribute
// words known for the image (e.g. "red", "sedan"); the stub mixes them into
// its image code so image and text land in a shared space.
struct ImageRef {
  const ImageTensor* image = nullptr;
  std::string id;
  std::vector<std::string> tags;
};

// Frozen image/text embedder. Implementations are immutable after
// construction and safe to share between threads.
class FrozenEmbedder {
 public:
  virtual ~FrozenEmbedder() = default;
  virtual RowVector embed_image(const ImageRef& ref) const = 0;
  virtual RowVector embed_text(std::string_view text) const = 0;
  virtual EmbedderKind kind() const = 0;
  virtual int dim() const = 0;
};

// Deterministic stand-in: images go through a fixed random projection of a
// 16x16 grayscale thumbnail (plus hashed tags), text through a hashed bag of
// words. Both outputs are L2-normalized.
class StubEmbedder final : public FrozenEmbedder {
 public:
  StubEmbedder(std::uint64_t seed, int sem_dim);

  RowVector embed_image(const ImageRef& ref) const override;
  RowVector embed_text(std::string_view text) const override;
  EmbedderKind kind() const override { return EmbedderKind::stub; }
  int dim() const override { return dim_; }

  static constexpr int kThumbSide = 16;
  static constexpr int kWordProbes = 4;  // signed slots per word, so one collision cannot erase a word

 private:
  RowVector bag_of_words(const std::vector<std::string>& words) const;

  std::uint64_t seed_;
  int dim_;
  Matrix projection_;  // [kThumbSide^2, dim]
};

std::unique_ptr<FrozenEmbedder> stub_embedder(std::uint64_t seed, int sem_dim);

// Lower-cased alphanumeric words of a caption.
std::vector<std::string> tokenize_words(std::string_view text);

// Rows of `vectors` correspond 1:1 to `ids`.
struct TextEmbeddingBank {
  std::vector<std::string> ids;
  Matrix vectors;  // [M, sem_dim]

  int size() const { return static_cast<int>(ids.size()); }
  int dim() const { return static_cast<int>(vectors.cols()); }
  // Row index of id, or -1.
  int find(std::string_view id) const;
  void rebuild_index();

 private:
  std::unordered_map<std::string, int> index_;
};

// Bank files: header `VMAE-EMB v1 <M> <sem_dim>` then M records. The text
// variant stores `<id>\t<v0>,<v1>,...` per line; files ending in `.bin` hold
// length-prefixed ids and little-endian float32 vectors.
TextEmbeddingBank load_embedding_bank(const std::filesystem::path& path);
void save_embedding_bank(const TextEmbeddingBank& bank, const std::filesystem::path& path);

// Key prefixes used when a single bank carries both modalities.
inline constexpr std::string_view kImageKeyPrefix = "img:";
inline constexpr std::string_view kTextKeyPrefix = "txt:";

// Looks images up by `img:<id>` and captions by `txt:<caption>`.
class FileBankEmbedder final : public FrozenEmbedder {
 public:
  explicit FileBankEmbedder(TextEmbeddingBank bank);

  RowVector embed_image(const ImageRef& ref) const override;
  RowVector embed_text(std::string_view text) const override;
  EmbedderKind kind() const override { return EmbedderKind::file_bank; }
  int dim() const override { return bank_.dim(); }
  const TextEmbeddingBank& bank() const { return bank_; }

 private:
  TextEmbeddingBank bank_;
};

// ---- losses ----

// || normalize(f_global * sem_head) - normalize(vc) ||^2, equal to 2 - 2 cos.
double feature_align_loss(const RowVector& f_global, const RowVector& vc, const Matrix& sem_head);

// softmax over j of (f . w_j) / tau; throws ParameterError when tau <= 0.
RowVector similarity_distribution(const RowVector& f, const Matrix& W, double tau);

struct ConsistencyTerms {
  double kl = 0.0;       // KL(s_clip || s_mae)
  double entropy = 0.0;  // H(s_mae)
  double total = 0.0;
  // s_mae has a zero where s_clip is positive; kl and total are +inf.
  bool fault = false;
};
ConsistencyTerms consistency_loss(const RowVector& s_clip, const RowVector& s_mae);

namespace graph {

ad::Var feature_align_loss(const ad::Var& f_global, const RowVector& vc, const ad::Var& sem_head);

struct ConsistencyGraph {
  ad::Var total;
  ad::Var kl;
  ad::Var entropy;
};
// f_unit: [1, sem_dim] unit vector; W: [M, sem_dim]; vc_unit: [1, sem_dim].
ConsistencyGraph consistency_loss(const ad::Var& f_unit, const Matrix& W, const RowVector& vc_unit,
                                  double tau);

}  // namespace graph
}  // namespace vmae
