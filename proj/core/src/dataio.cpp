#include "vmae/dataio.hpp"

#include "vmae/errors.hpp"
#include "vmae/random.hpp"
#include "vmae/structural_prior.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace vmae {

namespace fs = std::filesystem;

std::filesystem::path DatasetManifest::resolve(const std::filesystem::path& p) const {
  return p.is_absolute() ? p : base_dir / p;
}

// ---- manifest ----

namespace {

constexpr std::string_view kHeaderTag = "#attributes";

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(std::move(cur));
  return out;
}

int parse_int_field(const std::string& s, std::size_t record, const char* what) {
  try {
    std::size_t used = 0;
    const long v = std::stol(s, &used);
    if (used != s.size() || v < 0) throw std::invalid_argument("bad");
    return static_cast<int>(v);
  } catch (const std::exception&) {
    throw ParseError("manifest record " + std::to_string(record) + ": " + what + " '" + s +
                     "' is not a non-negative integer");
  }
}

}  // namespace

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  DatasetManifest m;
  m.base_dir = path.parent_path();

  std::string line;
  if (!std::getline(in, line)) throw ParseError("manifest " + path.string() + " is empty");
  {
    const auto fields = split(line, '\t');
    if (fields.size() != 2 || fields[0] != kHeaderTag) {
      throw ParseError("manifest line 1: expected '#attributes<TAB><names>' header");
    }
    if (!fields[1].empty()) m.attribute_names = split(fields[1], ',');
  }
  const std::size_t width = m.attribute_names.size();

  std::size_t record = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++record;
    const auto f = split(line, '\t');
    if (f.size() != 6) {
      throw ParseError("manifest record " + std::to_string(record) + ": expected 6 tab-separated fields, got " +
                       std::to_string(f.size()));
    }
    ManifestRecord r;
    if (f[0].empty() || f[0] == "-") {
      throw ParseError("manifest record " + std::to_string(record) + ": missing image path");
    }
    r.image_path = f[0];
    if (f[1] != "-") r.sketch_path = fs::path(f[1]);
    if (f[2] != "-") r.caption = f[2];
    const std::string bits = f[3] == "-" ? std::string() : f[3];
    if (bits.size() != width) {
      throw ParseError("manifest record " + std::to_string(record) + ": attribute width " +
                       std::to_string(bits.size()) + ", header declares " + std::to_string(width));
    }
    for (char c : bits) {
      if (c != '0' && c != '1') {
        throw ParseError("manifest record " + std::to_string(record) + ": attribute bits must be 0/1");
      }
      r.attributes.push_back(static_cast<std::uint8_t>(c - '0'));
    }
    r.identity = parse_int_field(f[4], record, "identity");
    r.fine_label = parse_int_field(f[5], record, "fine_label");

    if (!fs::exists(m.resolve(r.image_path))) {
      throw IoError("manifest record " + std::to_string(record) + ": image file '" +
                    r.image_path.string() + "' does not exist");
    }
    if (r.sketch_path && !fs::exists(m.resolve(*r.sketch_path))) {
      throw IoError("manifest record " + std::to_string(record) + ": sketch file '" +
                    r.sketch_path->string() + "' does not exist");
    }
    m.records.push_back(std::move(r));
  }
  return m;
}

void save_manifest(const DatasetManifest& manifest, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << kHeaderTag << '\t';
  for (std::size_t i = 0; i < manifest.attribute_names.size(); ++i) {
    out << (i ? "," : "") << manifest.attribute_names[i];
  }
  out << '\n';
  for (const auto& r : manifest.records) {
    if (r.caption && r.caption->find_first_of("\t\n") != std::string::npos) {
      throw InputError("caption contains a tab or newline: " + *r.caption);
    }
    out << r.image_path.generic_string() << '\t'
        << (r.sketch_path ? r.sketch_path->generic_string() : "-") << '\t'
        << (r.caption ? *r.caption : "-") << '\t';
    if (r.attributes.empty()) out << '-';
    for (auto b : r.attributes) out << static_cast<int>(b);
    out << '\t' << r.identity << '\t' << r.fine_label << '\n';
  }
  if (!out) throw IoError("failed writing manifest " + path.string());
}

// ---- synthetic vehicles ----

namespace {

struct Rgb {
  double r, g, b;
  double luma() const { return 0.299 * r + 0.587 * g + 0.114 * b; }
};

constexpr std::array<Rgb, 8> kPalette = {{{0.85, 0.10, 0.10},
                                           {0.10, 0.20, 0.85},
                                           {0.10, 0.65, 0.20},
                                           {0.95, 0.85, 0.10},
                                           {0.95, 0.95, 0.95},
                                           {0.08, 0.08, 0.08},
                                           {0.75, 0.75, 0.78},
                                           {0.95, 0.50, 0.05}}};

struct TypeGeometry {
  double length, body_h, cabin_h, cabin_bottom, cabin_top, cabin_shift;
};
// Fractions of the image size. cabin_shift moves the cabin toward the front.
constexpr std::array<TypeGeometry, 4> kGeometry = {{{0.72, 0.16, 0.13, 0.42, 0.26, 0.00},
                                                     {0.70, 0.22, 0.15, 0.50, 0.40, -0.04},
                                                     {0.80, 0.20, 0.16, 0.24, 0.18, 0.26},
                                                     {0.86, 0.40, 0.00, 0.00, 0.00, 0.00}}};
constexpr std::array<double, kProportionVariants> kLengthVariant = {0.92, 1.0, 1.05};
constexpr std::array<double, kProportionVariants> kHeightVariant = {1.08, 1.0, 0.92};
constexpr double kGroundLine = 0.74;
constexpr double kWheelRadius = 0.085;
constexpr Rgb kWheel = {0.12, 0.12, 0.12};

void put(ImageTensor& img, int r, int c, const Rgb& rgb) {
  img.at(r, c, 0) = std::clamp(rgb.r, 0.0, 1.0);
  img.at(r, c, 1) = std::clamp(rgb.g, 0.0, 1.0);
  img.at(r, c, 2) = std::clamp(rgb.b, 0.0, 1.0);
}

}  // namespace

std::vector<std::string> synthetic_attribute_names() {
  std::vector<std::string> names;
  for (auto c : kColorNames) names.emplace_back(c);
  for (auto t : kTypeNames) names.emplace_back(t);
  return names;
}

std::vector<std::uint8_t> encode_attributes(int color, int type) {
  std::vector<std::uint8_t> bits(kColorNames.size() + kTypeNames.size(), 0);
  bits.at(static_cast<std::size_t>(color)) = 1;
  bits.at(kColorNames.size() + static_cast<std::size_t>(type)) = 1;
  return bits;
}

std::optional<std::pair<int, int>> decode_attributes(const std::vector<std::uint8_t>& bits) {
  if (bits.size() != kColorNames.size() + kTypeNames.size()) return std::nullopt;
  int color = -1, type = -1, n_color = 0, n_type = 0;
  for (std::size_t i = 0; i < kColorNames.size(); ++i) {
    if (bits[i]) {
      color = static_cast<int>(i);
      ++n_color;
    }
  }
  for (std::size_t i = 0; i < kTypeNames.size(); ++i) {
    if (bits[kColorNames.size() + i]) {
      type = static_cast<int>(i);
      ++n_type;
    }
  }
  if (n_color != 1 || n_type != 1) return std::nullopt;
  return std::make_pair(color, type);
}

int fine_label_of(int type, int variant) { return type * kProportionVariants + variant; }

RenderedVehicle render_vehicle(const VehicleSpec& spec, int image_size) {
  const double s = image_size;
  const Rgb body = kPalette.at(static_cast<std::size_t>(spec.color));
  const Rgb cabin = {body.r * 0.75, body.g * 0.75, body.b * 0.75};
  const auto& geo = kGeometry.at(static_cast<std::size_t>(spec.type));

  Rng rng(spec.clutter_seed);
  // Background luma must stay clear of the body and cabin luma.
  Rgb bg{};
  for (int attempt = 0; attempt < 64; ++attempt) {
    const double base = rng.uniform(0.35, 0.6);
    bg = {base + rng.uniform(-0.05, 0.05), base + rng.uniform(-0.05, 0.05),
          base + rng.uniform(-0.05, 0.05)};
    if (std::abs(bg.luma() - body.luma()) >= 0.12 && std::abs(bg.luma() - cabin.luma()) >= 0.06) break;
  }

  ImageTensor img(image_size, image_size, 3);
  for (int r = 0; r < image_size; ++r) {
    const double shade = 0.04 * ((r + 0.5) / s - 0.5);
    for (int c = 0; c < image_size; ++c) put(img, r, c, {bg.r + shade, bg.g + shade, bg.b + shade});
  }
  const int n_lines = 2 + static_cast<int>(rng.below(3));
  for (int i = 0; i < n_lines; ++i) {
    const double delta = rng.uniform(-0.15, 0.15);
    const Rgb line = {bg.r + delta, bg.g + delta, bg.b + delta};
    const int at = static_cast<int>(rng.below(static_cast<std::uint64_t>(image_size)));
    const bool horizontal = rng.bernoulli(0.5);
    for (int k = 0; k < image_size; ++k) {
      if (horizontal) {
        put(img, at, k, line);
      } else {
        put(img, k, at, line);
      }
    }
  }

  const double cx = 0.5 + spec.offset_x;
  const double length = geo.length * spec.length_scale;
  const double body_h = geo.body_h * spec.height_scale;
  const double bottom = kGroundLine + spec.offset_y;
  const double top = bottom - body_h;
  const double left = cx - length / 2.0;
  const double right = cx + length / 2.0;
  const double front_dir = spec.facing_left ? -1.0 : 1.0;
  const double cabin_cx = cx + front_dir * geo.cabin_shift * length;
  const double cabin_h = geo.cabin_h * spec.height_scale;
  const double wheel_y = bottom;
  const double wheel_x[2] = {left + 0.2 * length, left + 0.8 * length};

  // 0 background, 1 body, 2 cabin, 3 wheel
  std::vector<int> region(static_cast<std::size_t>(image_size) * image_size, 0);
  for (int r = 0; r < image_size; ++r) {
    const double y = (r + 0.5) / s;
    for (int c = 0; c < image_size; ++c) {
      const double x = (c + 0.5) / s;
      int label = 0;
      if (cabin_h > 0.0 && y >= top - cabin_h && y < top) {
        const double t = (top - y) / cabin_h;  // 0 at the body, 1 at the roof
        const double half = 0.5 * (geo.cabin_bottom + t * (geo.cabin_top - geo.cabin_bottom)) * length;
        if (std::abs(x - cabin_cx) <= half) label = 2;
      }
      if (x >= left && x <= right && y >= top && y <= bottom) label = 1;
      for (double wx : wheel_x) {
        if ((x - wx) * (x - wx) + (y - wheel_y) * (y - wheel_y) <= kWheelRadius * kWheelRadius) label = 3;
      }
      region[static_cast<std::size_t>(r) * image_size + c] = label;
      if (label == 1) put(img, r, c, body);
      if (label == 2) put(img, r, c, cabin);
      if (label == 3) put(img, r, c, kWheel);
    }
  }

  ImageTensor outline(image_size, image_size, 1);
  auto inside = [&](int r, int c) {
    if (r < 0 || c < 0 || r >= image_size || c >= image_size) return false;
    return region[static_cast<std::size_t>(r) * image_size + c] != 0;
  };
  for (int r = 0; r < image_size; ++r) {
    for (int c = 0; c < image_size; ++c) {
      if (inside(r, c) && (!inside(r - 1, c) || !inside(r + 1, c) || !inside(r, c - 1) || !inside(r, c + 1))) {
        outline.at(r, c, 0) = 1.0;
      }
    }
  }
  return {std::move(img), std::move(outline)};
}

std::vector<VehicleSpec> sample_vehicle_specs(int n, std::uint64_t seed) {
  if (n < 1) throw ParameterError("synthetic dataset needs n >= 1");
  const int n_proto = std::max(1, n / 4);
  struct Proto {
    int color, type, variant;
  };
  std::vector<Proto> protos;
  Rng proto_rng(mix_seed(seed, 0xC0105));
  for (int p = 0; p < n_proto; ++p) {
    protos.push_back({static_cast<int>(proto_rng.below(kColorNames.size())),
                      static_cast<int>(proto_rng.below(kTypeNames.size())),
                      static_cast<int>(proto_rng.below(kProportionVariants))});
  }
  const auto assignment = seeded_permutation(n, mix_seed(seed, 0xA551));
  std::vector<VehicleSpec> specs;
  specs.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int proto = assignment[static_cast<std::size_t>(i)] % n_proto;
    const Proto& p = protos[static_cast<std::size_t>(proto)];
    Rng rng(mix_seed(seed, 0x5A3E, static_cast<std::uint64_t>(i)));
    VehicleSpec v;
    v.identity = proto;
    v.color = p.color;
    v.type = p.type;
    v.variant = p.variant;
    v.length_scale = kLengthVariant[static_cast<std::size_t>(p.variant)];
    v.height_scale = kHeightVariant[static_cast<std::size_t>(p.variant)];
    v.facing_left = rng.bernoulli(0.5);
    v.offset_x = rng.uniform(-0.03, 0.03);
    v.offset_y = rng.uniform(-0.04, 0.04);
    v.clutter_seed = rng.next_u64();
    specs.push_back(v);
  }
  return specs;
}

std::string caption_for(const VehicleSpec& spec, int template_id) {
  const std::string color(kColorNames.at(static_cast<std::size_t>(spec.color)));
  const std::string type(kTypeNames.at(static_cast<std::size_t>(spec.type)));
  const std::string article = color.front() == 'o' ? "an " : "a ";
  switch (template_id % 3) {
    case 0:
      return article + color + " " + type;
    case 1:
      return article + color + " " + type + " facing " + (spec.facing_left ? "left" : "right");
    default:
      return "photo of " + article + color + " " + type + " on the road";
  }
}

SyntheticDataset generate_synthetic(const SyntheticOptions& options, const fs::path& out_dir) {
  if (options.n < 1) throw ParameterError("synthetic dataset needs n >= 1");
  if (options.image_size < 8) throw ParameterError("synthetic images must be at least 8 pixels");
  if (!(options.caption_fraction >= 0.0 && options.caption_fraction <= 1.0)) {
    throw ParameterError("caption fraction must lie in [0, 1]");
  }
  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  if (options.write_outlines) fs::create_directories(out_dir / "outlines", ec);
  if (ec) throw IoError("cannot create dataset directory " + out_dir.string() + ": " + ec.message());

  SyntheticDataset ds;
  ds.specs = sample_vehicle_specs(options.n, options.seed);
  ds.manifest.attribute_names = synthetic_attribute_names();
  ds.manifest.base_dir = out_dir;

  const int n_captioned =
      static_cast<int>(std::lround(options.caption_fraction * static_cast<double>(options.n)));
  const auto caption_order = seeded_permutation(options.n, mix_seed(options.seed, 0xCA97));
  std::vector<bool> captioned(static_cast<std::size_t>(options.n), false);
  for (int k = 0; k < n_captioned; ++k) captioned[static_cast<std::size_t>(caption_order[static_cast<std::size_t>(k)])] = true;

  for (int i = 0; i < options.n; ++i) {
    const VehicleSpec& spec = ds.specs[static_cast<std::size_t>(i)];
    const auto rendered = render_vehicle(spec, options.image_size);
    char stem[32];
    std::snprintf(stem, sizeof stem, "%06d", i);
    const fs::path rel = fs::path("images") / (std::string(stem) + ".png");
    write_png(rendered.image, out_dir / rel);
    if (options.write_outlines) {
      write_png(rendered.outline, out_dir / "outlines" / (std::string(stem) + ".png"));
    }
    ManifestRecord r;
    r.image_path = rel;
    if (captioned[static_cast<std::size_t>(i)]) {
      r.caption = caption_for(spec, static_cast<int>(mix_seed(options.seed, 0x7E, static_cast<std::uint64_t>(i)) % 3));
    }
    r.attributes = encode_attributes(spec.color, spec.type);
    r.identity = spec.identity;
    r.fine_label = fine_label_of(spec.type, spec.variant);
    ds.manifest.records.push_back(std::move(r));
  }
  save_manifest(ds.manifest, out_dir / "manifest.tsv");
  return ds;
}

// ---- in-memory dataset ----

Dataset load_dataset(const DatasetManifest& manifest) {
  Dataset ds;
  ds.manifest = manifest;
  ds.samples.reserve(manifest.records.size());
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const auto& r = manifest.records[i];
    Sample s;
    const fs::path image_path = manifest.resolve(r.image_path);
    s.id = image_path.stem().string();
    s.image = read_png(image_path);
    if (s.image.channels() == 1) {
      ImageTensor rgb(s.image.height(), s.image.width(), 3);
      for (int y = 0; y < rgb.height(); ++y)
        for (int x = 0; x < rgb.width(); ++x)
          for (int ch = 0; ch < 3; ++ch) rgb.at(y, x, ch) = s.image.at(y, x, 0);
      s.image = std::move(rgb);
    }
    std::optional<fs::path> sketch_file;
    if (r.sketch_path) {
      sketch_file = manifest.resolve(*r.sketch_path);
    } else {
      const fs::path sibling = image_path.parent_path() / (s.id + ".sketch.png");
      if (fs::exists(sibling)) sketch_file = sibling;
    }
    if (sketch_file) {
      ImageTensor sk = to_grayscale(read_png(*sketch_file));
      if (sk.height() != s.image.height() || sk.width() != s.image.width()) {
        throw InputError("record " + std::to_string(i + 1) + ": sketch resolution differs from its image");
      }
      s.sketch = {std::move(sk), SketchSource::external_file};
    } else {
      s.sketch = extract_edges(s.image);
    }
    s.caption = r.caption;
    s.attributes = r.attributes;
    for (std::size_t a = 0; a < r.attributes.size(); ++a) {
      if (r.attributes[a]) s.tags.push_back(manifest.attribute_names.at(a));
    }
    s.identity = r.identity;
    s.fine_label = r.fine_label;
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

std::vector<std::vector<int>> batch_indices(int n_records, int batch_size, std::uint64_t seed,
                                            int epoch) {
  if (n_records < 1) throw InputError("cannot batch an empty dataset");
  if (batch_size < 1) throw ParameterError("batch_size must be at least 1");
  const auto order = seeded_permutation(n_records, mix_seed(seed, 0xE90C, static_cast<std::uint64_t>(epoch)));
  std::vector<std::vector<int>> batches;
  for (int start = 0; start < n_records; start += batch_size) {
    const int end = std::min(n_records, start + batch_size);
    batches.emplace_back(order.begin() + start, order.begin() + end);
  }
  return batches;
}

std::vector<DataBatch> make_batches(const Dataset& dataset, int batch_size, std::uint64_t seed,
                                    int epoch) {
  std::vector<DataBatch> out;
  for (auto& idx : batch_indices(dataset.size(), batch_size, seed, epoch)) {
    DataBatch b;
    for (int i : idx) b.samples.push_back(&dataset.samples[static_cast<std::size_t>(i)]);
    b.indices = std::move(idx);
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace vmae
