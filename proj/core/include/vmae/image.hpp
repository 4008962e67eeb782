#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

namespace vmae {

// H x W x C pixel array, channel-last, values in [0, 1].
class ImageTensor {
 public:
  ImageTensor() = default;
  ImageTensor(int height, int width, int channels, double fill = 0.0);
  // Validates dimensions, data length and the [0, 1] range.
  ImageTensor(int height, int width, int channels, std::vector<double> data);

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  bool empty() const { return data_.empty(); }

  double& at(int row, int col, int channel) { return data_[index(row, col, channel)]; }
  double at(int row, int col, int channel) const { return data_[index(row, col, channel)]; }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  // Throws InputError when any value is outside [0, 1] or non-finite.
  void validate_range() const;
  // Throws InputError naming the axis that is not a multiple of patch_size.
  void require_divisible(int patch_size) const;

  friend bool operator==(const ImageTensor&, const ImageTensor&) = default;

 private:
  std::size_t index(int row, int col, int channel) const {
    return (static_cast<std::size_t>(row) * width_ + col) * channels_ + channel;
  }

  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<double> data_;
};

// Luma (BT.601 weights) of an RGB image; single-channel input is returned as is.
ImageTensor to_grayscale(const ImageTensor& image);

enum class SketchSource { builtin_gradient, external_file };

struct SketchMap {
  ImageTensor map;  // C == 1
  SketchSource source = SketchSource::builtin_gradient;
};

// 8-bit PNG codec. Grayscale files decode to C = 1, RGB/RGBA to C = 3
// (alpha dropped). Values are k/255.
ImageTensor read_png(const std::filesystem::path& path);
void write_png(const ImageTensor& image, const std::filesystem::path& path);

}  // namespace vmae
