#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "firenet/image.hpp"
#include "firenet/kernels.hpp"
#include "firenet/network.hpp"

namespace firenet {

namespace fs = std::filesystem;

class DatasetError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Directory names in class-index order.
inline const std::vector<std::string>& class_directories() {
  static const std::vector<std::string> dirs{"fire", "nofire"};
  return dirs;
}

struct Sample {
  Tensor image;  // [side, side, 3], values in [0, 1]
  std::size_t label = 0;
  std::string source_id;
};

struct SkippedFile {
  std::string path;
  std::string reason;
};

struct DatasetManifest {
  std::string root;
  std::map<std::string, std::vector<std::string>> files;  // class -> loaded paths
  std::map<std::string, std::size_t> counts;
  std::vector<SkippedFile> skipped;

  std::string report() const {
    std::ostringstream os;
    os << "root=" << root << '\n';
    for (const auto& [cls, n] : counts) os << "count." << cls << '=' << n << '\n';
    os << "skipped=" << skipped.size() << '\n';
    for (const auto& s : skipped) os << "skip " << s.path << ": " << s.reason << '\n';
    return os.str();
  }
};

inline std::vector<std::uint8_t> read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open " + path.string());
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

inline void write_file_bytes(const fs::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DatasetError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DatasetError("failed writing " + path.string());
}

/// Decode, resize to side x side, and scale into [0, 1].
inline Tensor prepare_image(const RgbImage& img, std::size_t side) {
  return to_tensor(resize_bilinear(img, side));
}

/// Regular files of a directory in sorted path order.
inline std::vector<fs::path> sorted_files(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file()) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

struct LoadedDataset {
  std::vector<Sample> samples;
  DatasetManifest manifest;
};

/**
 * Loads root/fire/ and root/nofire/ files in sorted path order. Files that fail
 * to decode are listed in the manifest skip list rather than aborting.
 */
inline LoadedDataset load_dataset(const fs::path& root, std::size_t input_side) {
  if (!fs::is_directory(root)) throw DatasetError("dataset root " + root.string() + " is not a directory");
  LoadedDataset out;
  out.manifest.root = root.string();
  const auto& classes = class_directories();
  for (std::size_t label = 0; label < classes.size(); ++label) {
    const fs::path dir = root / classes[label];
    if (!fs::is_directory(dir)) throw DatasetError("missing class directory " + dir.string());
    std::size_t loaded = 0;
    for (const auto& path : sorted_files(dir)) {
      try {
        const auto bytes = read_file_bytes(path);
        out.samples.push_back({prepare_image(decode_ppm(bytes), input_side), label, path.string()});
        out.manifest.files[classes[label]].push_back(path.string());
        ++loaded;
      } catch (const std::exception& e) {
        out.manifest.skipped.push_back({path.string(), e.what()});
      }
    }
    if (loaded == 0) throw DatasetError("no decodable images in " + dir.string());
    out.manifest.counts[classes[label]] = loaded;
  }
  return out;
}

/// Stacks sample images into an [n, side, side, 3] batch.
inline Tensor make_batch(const std::vector<const Sample*>& samples) {
  if (samples.empty()) throw DatasetError("cannot batch zero samples");
  Shape s = samples.front()->image.shape();
  const std::size_t len = samples.front()->image.size();
  std::vector<float> data;
  data.reserve(len * samples.size());
  for (const Sample* smp : samples) {
    if (smp->image.shape() != s) throw ShapeError("sample " + smp->source_id + " has shape " + shape_str(smp->image.shape()));
    data.insert(data.end(), smp->image.values().begin(), smp->image.values().end());
  }
  s.insert(s.begin(), samples.size());
  return Tensor(std::move(s), std::move(data));
}

// ---------------------------------------------------------------------------
// Augmentation: independent 50% horizontal flip and 50% random crop covering
// 90-100% of the area, resized back to the original side.

struct AugmentPlan {
  bool flip = false;
  bool crop = false;
  double area = 1.0;  // fraction of the image kept by the crop
  double offset_x = 0.0;  // position of the crop window in [0, 1]
  double offset_y = 0.0;
};

template <typename URBG>
AugmentPlan draw_augment_plan(URBG& rng) {
  AugmentPlan p;
  p.flip = unit_draw(rng) < 0.5;
  p.crop = unit_draw(rng) < 0.5;
  p.area = 0.9 + 0.1 * unit_draw(rng);
  p.offset_x = unit_draw(rng);
  p.offset_y = unit_draw(rng);
  return p;
}

inline Sample apply_augment(const Sample& sample, const AugmentPlan& plan) {
  Image<float> img = tensor_to_image(sample.image);
  if (plan.crop) {
    const std::size_t side_w = img.width, side_h = img.height;
    const double k = std::sqrt(std::clamp(plan.area, 0.9, 1.0));
    const auto cw = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(k * static_cast<double>(side_w))));
    const auto ch = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(k * static_cast<double>(side_h))));
    const auto x0 = static_cast<std::size_t>(std::floor(plan.offset_x * static_cast<double>(side_w - cw + 1)));
    const auto y0 = static_cast<std::size_t>(std::floor(plan.offset_y * static_cast<double>(side_h - ch + 1)));
    img = resize_bilinear(crop(img, std::min(x0, side_w - cw), std::min(y0, side_h - ch), cw, ch), side_w, side_h);
  }
  if (plan.flip) img = flip_horizontal(img);
  for (auto& v : img.data) v = std::clamp(v, 0.0f, 1.0f);
  return {image_to_tensor(img), sample.label, sample.source_id};
}

template <typename URBG>
Sample augment(const Sample& sample, URBG& rng) {
  return apply_augment(sample, draw_augment_plan(rng));
}

// ---------------------------------------------------------------------------
// Synthetic two-colour blob images: a warm disc for "fire", a cool disc for
// "nofire", on the same noisy dark background.

inline RgbImage make_blob_image(std::size_t width, std::size_t height, bool fire, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> bg(10, 70);
  RgbImage img(width, height, 3);
  for (auto& v : img.data) v = static_cast<std::uint8_t>(bg(rng));

  const double side = static_cast<double>(std::min(width, height));
  std::uniform_real_distribution<double> radius_d(0.18 * side, 0.32 * side);
  const double r = radius_d(rng);
  std::uniform_real_distribution<double> cx_d(r, static_cast<double>(width) - r);
  std::uniform_real_distribution<double> cy_d(r, static_cast<double>(height) - r);
  const double cx = cx_d(rng), cy = cy_d(rng);

  std::uniform_int_distribution<int> hi(200, 255), mid(60, 160), lo(0, 40);
  const int c0 = fire ? hi(rng) : lo(rng);
  const int c1 = mid(rng);
  const int c2 = fire ? lo(rng) : hi(rng);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const double dx = static_cast<double>(x) + 0.5 - cx, dy = static_cast<double>(y) + 0.5 - cy;
      if (dx * dx + dy * dy <= r * r) {
        img.at(y, x, 0) = static_cast<std::uint8_t>(c0);
        img.at(y, x, 1) = static_cast<std::uint8_t>(c1);
        img.at(y, x, 2) = static_cast<std::uint8_t>(c2);
      }
    }
  }
  return img;
}

/// Balanced blob set: samples alternate fire / nofire.
inline std::vector<Sample> make_blob_dataset(std::size_t count, std::size_t side, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Sample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const bool fire = i % 2 == 0;
    out.push_back({to_tensor(make_blob_image(side, side, fire, rng)), fire ? kFireClass : kNoFireClass,
                   "blob:" + std::to_string(seed) + ":" + std::to_string(i)});
  }
  return out;
}

/// Writes a blob set as root/{fire,nofire}/NNNN.ppm.
inline void write_blob_dataset(const fs::path& root, std::size_t count, std::size_t side, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (const auto& cls : class_directories()) fs::create_directories(root / cls);
  for (std::size_t i = 0; i < count; ++i) {
    const bool fire = i % 2 == 0;
    const auto img = make_blob_image(side, side, fire, rng);
    char name[32];
    std::snprintf(name, sizeof name, "%04zu.ppm", i);
    write_file_bytes(root / class_directories()[fire ? kFireClass : kNoFireClass] / name, encode_ppm(img));
  }
}

}  // namespace firenet
