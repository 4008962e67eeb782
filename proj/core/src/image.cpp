#include "vmae/image.hpp"

#include "vmae/errors.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace vmae {

ImageTensor::ImageTensor(int height, int width, int channels, double fill)
    : height_(height), width_(width), channels_(channels) {
  if (height <= 0 || width <= 0 || channels <= 0) {
    throw InputError("image dimensions must be positive");
  }
  data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

ImageTensor::ImageTensor(int height, int width, int channels, std::vector<double> data)
    : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
  if (height <= 0 || width <= 0 || channels <= 0) {
    throw InputError("image dimensions must be positive");
  }
  if (data_.size() != static_cast<std::size_t>(height) * width * channels) {
    throw InputError("image data length does not match H*W*C");
  }
  validate_range();
}

void ImageTensor::validate_range() const {
  for (std::size_t i = 0; i < data_.size(); ++i) {
    const double v = data_[i];
    if (!(v >= 0.0 && v <= 1.0)) {
      std::ostringstream os;
      os << "pixel value " << v << " at flat index " << i << " outside [0, 1]";
      throw InputError(os.str());
    }
  }
}

void ImageTensor::require_divisible(int patch_size) const {
  if (patch_size <= 0) throw ParameterError("patch_size must be positive");
  if (height_ % patch_size != 0) {
    std::ostringstream os;
    os << "height " << height_ << " is not divisible by patch size " << patch_size;
    throw InputError(os.str());
  }
  if (width_ % patch_size != 0) {
    std::ostringstream os;
    os << "width " << width_ << " is not divisible by patch size " << patch_size;
    throw InputError(os.str());
  }
}

ImageTensor to_grayscale(const ImageTensor& image) {
  if (image.channels() == 1) return image;
  if (image.channels() != 3) throw InputError("grayscale conversion expects 1 or 3 channels");
  ImageTensor gray(image.height(), image.width(), 1);
  for (int r = 0; r < image.height(); ++r) {
    for (int c = 0; c < image.width(); ++c) {
      const double y =
          0.299 * image.at(r, c, 0) + 0.587 * image.at(r, c, 1) + 0.114 * image.at(r, c, 2);
      gray.at(r, c, 0) = std::clamp(y, 0.0, 1.0);
    }
  }
  return gray;
}

}  // namespace vmae
