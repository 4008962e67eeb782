#include "vmae/reconstruct.hpp"

#include "vmae/backbone.hpp"
#include "vmae/errors.hpp"

#include <algorithm>
#include <cmath>

namespace vmae {

namespace {

ImageTensor as_rgb(const ImageTensor& image) {
  if (image.channels() == 3) return image;
  if (image.channels() != 1) throw InputError("reconstruct expects a 1- or 3-channel image");
  ImageTensor out(image.height(), image.width(), 3);
  for (int r = 0; r < image.height(); ++r)
    for (int c = 0; c < image.width(); ++c)
      for (int k = 0; k < 3; ++k) out.at(r, c, k) = image.at(r, c, 0);
  return out;
}

}  // namespace

Reconstruction reconstruct(const ModelParams& params, const ImageTensor& image, double mask_ratio,
                           std::uint64_t seed) {
  const auto& cfg = params.config();
  Reconstruction rec;
  rec.original = as_rgb(image);
  if (rec.original.height() != cfg.image_size || rec.original.width() != cfg.image_size) {
    throw InputError("image is " + std::to_string(rec.original.height()) + "x" + std::to_string(rec.original.width()) +
                     ", the model expects " + std::to_string(cfg.image_size) + "x" + std::to_string(cfg.image_size));
  }
  const PatchSequence patches = patchify(rec.original, cfg.patch_size);
  rec.mask = sample_mask(patches.count(), mask_ratio, seed);
  const Matrix enc = encode(embed_patches(patches, rec.mask, params), params);
  const FeatureBundle out = decode(enc, rec.mask, params);

  PatchSequence grey = patches, filled = patches;
  for (int j = 0; j < rec.mask.n_masked(); ++j) {
    const int p = rec.mask.masked_idx[static_cast<std::size_t>(j)];
    grey.patches.row(p).setConstant(0.5);
    filled.patches.row(p) = out.pixel_pred.row(j).array().min(1.0).max(0.0).matrix();
  }
  rec.masked = unpatchify(grey);
  rec.filled = unpatchify(filled);

  const int h = rec.original.height(), w = rec.original.width();
  rec.error = ImageTensor(h, w, 3);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      double e = 0.0;
      for (int k = 0; k < 3; ++k) e += std::abs(rec.filled.at(r, c, k) - rec.original.at(r, c, k));
      rec.error.at(r, c, 0) = std::min(1.0, e / 3.0);
    }

  rec.panel = ImageTensor(h, 4 * w, 3);
  const ImageTensor* parts[4] = {&rec.original, &rec.masked, &rec.filled, &rec.error};
  for (int q = 0; q < 4; ++q)
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c)
        for (int k = 0; k < 3; ++k) rec.panel.at(r, q * w + c, k) = parts[q]->at(r, c, k);
  return rec;
}

}  // namespace vmae
