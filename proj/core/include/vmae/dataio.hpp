#pragma once

#include "vmae/image.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace vmae {

struct ManifestRecord {
  std::filesystem::path image_path;  // relative to the manifest directory unless absolute
  std::optional<std::filesystem::path> sketch_path;
  std::optional<std::string> caption;
  std::vector<std::uint8_t> attributes;  // 0/1 per attribute name
  int identity = 0;
  int fine_label = 0;

  friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

// Manifest file: a header line `#attributes\t<name>,<name>,...` followed by
// one record per line:
//   image_path \t sketch_path|- \t caption|- \t attr_bits \t identity \t fine_label
struct DatasetManifest {
  std::vector<std::string> attribute_names;
  std::vector<ManifestRecord> records;
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const std::filesystem::path& p) const;
  friend bool operator==(const DatasetManifest& a, const DatasetManifest& b) {
    return a.attribute_names == b.attribute_names && a.records == b.records;
  }
};

DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

// ---- synthetic vehicles ----

inline constexpr std::array<std::string_view, 8> kColorNames = {
    "red", "blue", "green", "yellow", "white", "black", "silver", "orange"};
inline constexpr std::array<std::string_view, 4> kTypeNames = {"sedan", "suv", "truck", "bus"};
inline constexpr int kProportionVariants = 3;

struct VehicleSpec {
  int identity = 0;  // index of the prototype the vehicle was drawn from
  int color = 0;
  int type = 0;
  int variant = 0;  // proportion variant within the type
  bool facing_left = false;
  double length_scale = 1.0;
  double height_scale = 1.0;
  double offset_x = 0.0;  // fraction of the image size
  double offset_y = 0.0;
  std::uint64_t clutter_seed = 0;
};

struct RenderedVehicle {
  ImageTensor image;    // RGB
  ImageTensor outline;  // C = 1, 1 on the silhouette boundary
};

RenderedVehicle render_vehicle(const VehicleSpec& spec, int image_size);

// Attribute bits: one-hot color (8) followed by one-hot type (4).
std::vector<std::string> synthetic_attribute_names();
std::vector<std::uint8_t> encode_attributes(int color, int type);
// Inverse of encode_attributes; nullopt when the bits are not a valid pair of one-hots.
std::optional<std::pair<int, int>> decode_attributes(const std::vector<std::uint8_t>& bits);
int fine_label_of(int type, int variant);

struct SyntheticOptions {
  int n = 64;
  int image_size = 32;
  std::uint64_t seed = 0;
  double caption_fraction = 0.3;
  bool write_outlines = true;
};

struct SyntheticDataset {
  DatasetManifest manifest;
  std::vector<VehicleSpec> specs;  // ground truth per record
};

// Renders n vehicles into out_dir/images, outline masks into out_dir/outlines
// and writes out_dir/manifest.tsv. Exactly round(caption_fraction * n)
// records receive a caption.
SyntheticDataset generate_synthetic(const SyntheticOptions& options,
                                    const std::filesystem::path& out_dir);
// The specs generate_synthetic would draw, without touching the filesystem.
std::vector<VehicleSpec> sample_vehicle_specs(int n, std::uint64_t seed);
std::string caption_for(const VehicleSpec& spec, int template_id);

// ---- in-memory dataset and batching ----

struct Sample {
  std::string id;  // image file stem
  ImageTensor image;
  SketchMap sketch;  // loaded from file when available, else extracted
  std::optional<std::string> caption;
  std::vector<std::uint8_t> attributes;
  std::vector<std::string> tags;  // names of the set attributes
  int identity = 0;
  int fine_label = 0;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<Sample> samples;

  int size() const { return static_cast<int>(samples.size()); }
};

// Decodes every image; sketches come from the manifest, a sibling
// `<stem>.sketch.png`, or the built-in extractor, in that order.
Dataset load_dataset(const DatasetManifest& manifest);

// Seeded per-epoch shuffle; the last short batch is kept.
std::vector<std::vector<int>> batch_indices(int n_records, int batch_size, std::uint64_t seed,
                                            int epoch);

struct DataBatch {
  std::vector<int> indices;
  std::vector<const Sample*> samples;
};
std::vector<DataBatch> make_batches(const Dataset& dataset, int batch_size, std::uint64_t seed,
                                    int epoch);

}  // namespace vmae
