#include "vmae/tokenizer.hpp"

#include "vmae/backbone.hpp"
#include "vmae/errors.hpp"
#include "vmae/params.hpp"
#include "vmae/random.hpp"

#include <algorithm>
#include <cfenv>
#include <cmath>
#include <sstream>

namespace vmae {

bool MaskPlan::is_masked(int index) const {
  return std::binary_search(masked_idx.begin(), masked_idx.end(), index);
}

PatchSequence patchify(const ImageTensor& image, int patch_size) {
  image.require_divisible(patch_size);
  PatchSequence seq;
  seq.patch_size = patch_size;
  seq.channels = image.channels();
  seq.grid_rows = image.height() / patch_size;
  seq.grid_cols = image.width() / patch_size;
  const int c = image.channels();
  seq.patches.resize(seq.count(), static_cast<Index>(patch_size) * patch_size * c);
  for (int gr = 0; gr < seq.grid_rows; ++gr) {
    for (int gc = 0; gc < seq.grid_cols; ++gc) {
      const int p = gr * seq.grid_cols + gc;
      Index k = 0;
      for (int r = 0; r < patch_size; ++r) {
        for (int col = 0; col < patch_size; ++col) {
          for (int ch = 0; ch < c; ++ch) {
            seq.patches(p, k++) = image.at(gr * patch_size + r, gc * patch_size + col, ch);
          }
        }
      }
    }
  }
  return seq;
}

ImageTensor unpatchify(const PatchSequence& seq) {
  const Index expected_cols = static_cast<Index>(seq.patch_size) * seq.patch_size * seq.channels;
  if (seq.patch_size <= 0 || seq.channels <= 0 || seq.grid_rows <= 0 || seq.grid_cols <= 0) {
    throw StructuralError("unpatchify: invalid grid description");
  }
  if (seq.patches.rows() != seq.count() || seq.patches.cols() != expected_cols) {
    std::ostringstream os;
    os << "unpatchify: " << seq.patches.rows() << " patches of width " << seq.patches.cols()
       << " do not fill a " << seq.grid_rows << "x" << seq.grid_cols << " grid of width "
       << expected_cols;
    throw StructuralError(os.str());
  }
  const int ps = seq.patch_size;
  ImageTensor image(seq.grid_rows * ps, seq.grid_cols * ps, seq.channels);
  for (int p = 0; p < seq.count(); ++p) {
    const int gr = p / seq.grid_cols;
    const int gc = p % seq.grid_cols;
    Index k = 0;
    for (int r = 0; r < ps; ++r) {
      for (int col = 0; col < ps; ++col) {
        for (int ch = 0; ch < seq.channels; ++ch) {
          image.at(gr * ps + r, gc * ps + col, ch) = seq.patches(p, k++);
        }
      }
    }
  }
  return image;
}

int masked_count(int n_tokens, double ratio) {
  const int saved = std::fegetround();
  std::fesetround(FE_TONEAREST);
  const double rounded = std::nearbyint(ratio * n_tokens);
  std::fesetround(saved);
  return static_cast<int>(rounded);
}

MaskPlan sample_mask(int n_tokens, double ratio, std::uint64_t seed) {
  if (n_tokens < 1) throw ParameterError("sample_mask: n_tokens must be at least 1");
  if (!(ratio >= 0.0 && ratio < 1.0)) {
    std::ostringstream os;
    os << "sample_mask: ratio " << ratio << " outside [0, 1)";
    throw ParameterError(os.str());
  }
  const int n_masked = masked_count(n_tokens, ratio);
  const auto order = seeded_permutation(n_tokens, seed);

  MaskPlan plan;
  plan.n_tokens = n_tokens;
  plan.ratio = ratio;
  plan.seed = seed;
  plan.masked_idx.assign(order.begin(), order.begin() + n_masked);
  plan.visible_idx.assign(order.begin() + n_masked, order.end());
  std::sort(plan.masked_idx.begin(), plan.masked_idx.end());
  std::sort(plan.visible_idx.begin(), plan.visible_idx.end());
  return plan;
}

MaskPlan full_visibility(int n_tokens) {
  MaskPlan plan;
  plan.n_tokens = n_tokens;
  plan.visible_idx.resize(static_cast<std::size_t>(n_tokens));
  for (int i = 0; i < n_tokens; ++i) plan.visible_idx[static_cast<std::size_t>(i)] = i;
  return plan;
}

TokenEmbeddings embed_patches(const PatchSequence& patches, const MaskPlan& mask,
                              const ModelParams& params) {
  ParamGraph graph(params, false);
  return {graph::embed_image_tokens(graph, patches, mask).value(), true};
}

TokenEmbeddings embed_sketch(const PatchSequence& sketch_patches, const ModelParams& params) {
  ParamGraph graph(params, false);
  return {graph::embed_sketch_tokens(graph, sketch_patches).value(), true};
}

}  // namespace vmae
