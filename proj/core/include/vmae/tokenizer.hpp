#pragma once

#include "vmae/autodiff.hpp"
#include "vmae/image.hpp"

#include <cstdint>
#include <vector>

namespace vmae {

class ModelParams;

// N flattened patches; each row is one patch in (row, col, channel) order.
struct PatchSequence {
  Matrix patches;  // [N, patch_size * patch_size * channels]
  int patch_size = 0;
  int channels = 0;
  int grid_rows = 0;
  int grid_cols = 0;

  int count() const { return grid_rows * grid_cols; }
};

struct MaskPlan {
  int n_tokens = 0;
  std::vector<int> masked_idx;   // sorted
  std::vector<int> visible_idx;  // sorted
  double ratio = 0.0;
  std::uint64_t seed = 0;

  int n_masked() const { return static_cast<int>(masked_idx.size()); }
  int n_visible() const { return static_cast<int>(visible_idx.size()); }
  bool is_masked(int index) const;
};

struct TokenEmbeddings {
  Matrix tokens;  // [n, d_model]
  bool includes_cls = true;
};

// Patches enumerated row-major from the top-left cell.
PatchSequence patchify(const ImageTensor& image, int patch_size);
ImageTensor unpatchify(const PatchSequence& patches);

// Number of masked tokens: round(ratio * n_tokens), ties to even.
int masked_count(int n_tokens, double ratio);
// Uniform without replacement through a seeded shuffle.
MaskPlan sample_mask(int n_tokens, double ratio, std::uint64_t seed);
// A plan with every token visible.
MaskPlan full_visibility(int n_tokens);

// Projects the visible patches, prepends the CLS token and adds the
// position rows of the retained indices (row 0 is the CLS position).
TokenEmbeddings embed_patches(const PatchSequence& patches, const MaskPlan& mask,
                              const ModelParams& params);
// Sketch branch: every patch, sketch projection and sketch position table.
TokenEmbeddings embed_sketch(const PatchSequence& sketch_patches, const ModelParams& params);

}  // namespace vmae
