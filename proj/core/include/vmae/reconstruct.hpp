#pragma once

#include "vmae/image.hpp"
#include "vmae/params.hpp"
#include "vmae/tokenizer.hpp"

#include <cstdint>

namespace vmae {

struct Reconstruction {
  MaskPlan mask;
  ImageTensor original;
  ImageTensor masked;  // masked patches greyed out
  ImageTensor filled;  // visible patches kept, masked patches from the pixel head (clamped to [0,1])
  ImageTensor error;   // per-pixel mean absolute error of `filled`, as a black-to-red heat map
  ImageTensor panel;   // the four above side by side, width 4W
};

// Single-channel input is replicated to RGB.
Reconstruction reconstruct(const ModelParams& params, const ImageTensor& image, double mask_ratio,
                           std::uint64_t seed);

}  // namespace vmae
