#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "chroma/colorspace.hpp"
#include "chroma/errors.hpp"
#include "chroma/image_io.hpp"
#include "chroma/parallel.hpp"
#include "chroma/rng.hpp"
#include "chroma/tensor.hpp"

namespace chroma {

struct CropRect {
  int x = 0, y = 0, w = 0, h = 0;
};

struct ManifestEntry {
  std::string path;  // relative to the dataset root
  std::optional<CropRect> crop;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  int target_size = 64;
  std::uint64_t split_seed = 0;
  double train_fraction = 0.8;
  int skipped = 0;  // non-image files seen during scan
};

// Sidecar crop file: whitespace-separated `path x y w h` lines, `#` comments.
inline std::map<std::string, CropRect> read_crop_sidecar(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::map<std::string, CropRect> crops;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    std::string name;
    if (!(fields >> name)) continue;  // blank or comment-only line
    CropRect r;
    if (!(fields >> r.x >> r.y >> r.w >> r.h)) {
      throw FormatError("manifest " + path.string() + " line " +
                        std::to_string(lineno) +
                        ": expected `path x y w h`");
    }
    crops[name] = r;
  }
  return crops;
}

inline bool is_supported_image(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".png";
}

// Walks root_dir for supported images in stable lexicographic order and
// attaches crop rectangles from the optional sidecar manifest.
inline DatasetManifest scan(
    const std::filesystem::path& root_dir,
    const std::optional<std::filesystem::path>& sidecar = std::nullopt,
    int target_size = 64) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root_dir)) {
    throw IoError("dataset root is not a directory: " + root_dir.string());
  }
  std::map<std::string, CropRect> crops;
  if (sidecar) crops = read_crop_sidecar(*sidecar);

  DatasetManifest manifest;
  manifest.target_size = target_size;
  std::vector<std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(root_dir)) {
    if (!entry.is_regular_file()) continue;
    if (is_supported_image(entry.path())) {
      files.push_back(fs::relative(entry.path(), root_dir).generic_string());
    } else {
      ++manifest.skipped;
    }
  }
  std::sort(files.begin(), files.end());
  for (auto& f : files) {
    ManifestEntry e;
    e.path = std::move(f);
    if (auto it = crops.find(e.path); it != crops.end()) e.crop = it->second;
    manifest.entries.push_back(std::move(e));
  }
  if (manifest.entries.empty()) {
    throw IoError("no images found under " + root_dir.string());
  }
  return manifest;
}

struct PrepareReport {
  int prepared = 0;
  int skipped = 0;
  int failed = 0;
  std::vector<std::string> errors;  // one message per failed file
};

// Crops (when a rectangle is given) and resizes every manifest entry to a
// target_size square, writing 8-bit PNGs under out_dir. Failures are
// per-file; the rest of the corpus is still written.
inline PrepareReport prepare(const DatasetManifest& manifest,
                             const std::filesystem::path& root_dir,
                             const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const std::size_t n = manifest.entries.size();
  std::vector<std::string> errors(n);
  parallel_for(n, [&](std::size_t i) {
    const ManifestEntry& e = manifest.entries[i];
    try {
      RgbImage img = read_png(root_dir / e.path);
      if (e.crop) {
        img = crop(img, e.crop->x, e.crop->y, e.crop->w, e.crop->h);
      }
      img = resize_bilinear(img, manifest.target_size, manifest.target_size);
      const fs::path out = out_dir / fs::path(e.path).filename();
      write_png(out, img);
    } catch (const Error& err) {
      errors[i] = e.path + ": " + err.what();
    }
  });
  PrepareReport report;
  report.skipped = manifest.skipped;
  for (std::size_t i = 0; i < n; ++i) {
    if (errors[i].empty()) {
      ++report.prepared;
    } else {
      ++report.failed;
      report.errors.push_back(std::move(errors[i]));
    }
  }
  return report;
}

// Deterministic train/test partition: shuffle keyed by split_seed, then take
// round(train_fraction * N) entries for training. Disjoint and exhaustive.
inline std::pair<std::vector<std::string>, std::vector<std::string>> split(
    const DatasetManifest& manifest) {
  if (!(manifest.train_fraction > 0.0 && manifest.train_fraction < 1.0)) {
    throw PreconditionError("train_fraction must lie in (0,1), got " +
                            std::to_string(manifest.train_fraction));
  }
  const std::size_t n = manifest.entries.size();
  if (n < 2) throw PreconditionError("split needs at least 2 entries");
  std::vector<std::string> names;
  names.reserve(n);
  for (const auto& e : manifest.entries) names.push_back(e.path);
  RandomStream rs(derive_seed(manifest.split_seed, stream::kSplit));
  deterministic_shuffle(names, rs);
  const auto train_count = static_cast<std::size_t>(
      std::llround(manifest.train_fraction * static_cast<double>(n)));
  std::vector<std::string> train(names.begin(), names.begin() + train_count);
  std::vector<std::string> test(names.begin() + train_count, names.end());
  return {std::move(train), std::move(test)};
}

// A prepared corpus decoded into normalized network planes, held in memory.
// Desk-scale sizes keep this cheap; 1000 images at 64x64 is ~50 MB.
class Corpus {
 public:
  static Corpus load(const std::filesystem::path& dir, int image_size) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) {
      throw IoError("corpus dir is not a directory: " + dir.string());
    }
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_regular_file() && is_supported_image(entry.path())) {
        files.push_back(entry.path());
      }
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw IoError("no images found under " + dir.string());
    return load(files, image_size);
  }

  static Corpus load(const std::vector<std::filesystem::path>& files,
                     int image_size) {
    Corpus corpus;
    corpus.image_size_ = image_size;
    corpus.examples_.resize(files.size());
    corpus.names_.resize(files.size());
    parallel_for(files.size(), [&](std::size_t i) {
      RgbImage img = read_png(files[i]);
      if (img.width != image_size || img.height != image_size) {
        img = resize_bilinear(center_crop_square(img), image_size, image_size);
      }
      corpus.examples_[i] = lab_to_net(rgb_to_lab(img));
      corpus.names_[i] = files[i].filename().string();
    });
    return corpus;
  }

  std::size_t size() const { return examples_.size(); }
  int image_size() const { return image_size_; }
  const NetImagePair& example(std::size_t i) const { return examples_.at(i); }
  const std::string& name(std::size_t i) const { return names_.at(i); }

 private:
  int image_size_ = 0;
  std::vector<NetImagePair> examples_;
  std::vector<std::string> names_;
};

// One training batch: grayscale inputs, both chrominance targets, and the
// noise planes fed to the generator.
struct Minibatch {
  Tensor<float> inputs_L;   // [B,1,S,S]
  Tensor<float> targets_a;  // [B,1,S,S]
  Tensor<float> targets_b;  // [B,1,S,S]
  Tensor<float> noise_z;    // [B,1,S,S], uniform [-1,1]
  std::vector<std::size_t> indices;
};

// Deterministic minibatch iterator for one (channel, epoch). The permutation
// and the per-example noise seeds are generated serially up front, so the
// stream is a pure function of (seed, channel_tag, epoch).
class BatchStream {
 public:
  BatchStream(const Corpus& corpus, std::int64_t batch_size,
              std::uint64_t seed, std::uint64_t channel_tag,
              std::int64_t epoch)
      : corpus_(corpus), batch_size_(batch_size) {
    if (batch_size < 1) throw PreconditionError("batch_size must be >= 1");
    order_.resize(corpus.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    RandomStream perm(derive_seed(seed, stream::kBatchOrder, channel_tag,
                                  static_cast<std::uint64_t>(epoch)));
    deterministic_shuffle(order_, perm);
    noise_seeds_.reserve(order_.size());
    for (std::size_t pos = 0; pos < order_.size(); ++pos) {
      noise_seeds_.push_back(derive_seed(seed, stream::kNoise, channel_tag,
                                         static_cast<std::uint64_t>(epoch),
                                         static_cast<std::uint64_t>(pos)));
    }
  }

  std::optional<Minibatch> next() {
    if (cursor_ >= order_.size()) return std::nullopt;
    const std::size_t take =
        std::min(static_cast<std::size_t>(batch_size_), order_.size() - cursor_);
    const int s = corpus_.image_size();
    const std::int64_t b = static_cast<std::int64_t>(take);
    Minibatch batch{Tensor<float>({b, 1, s, s}), Tensor<float>({b, 1, s, s}),
                    Tensor<float>({b, 1, s, s}), Tensor<float>({b, 1, s, s}),
                    {}};
    const std::size_t plane = static_cast<std::size_t>(s) * s;
    for (std::size_t i = 0; i < take; ++i) {
      const std::size_t pos = cursor_ + i;
      const std::size_t idx = order_[pos];
      const NetImagePair& ex = corpus_.example(idx);
      std::copy_n(ex.input_L.data(), plane, batch.inputs_L.data() + i * plane);
      std::copy_n(ex.target_a.data(), plane, batch.targets_a.data() + i * plane);
      std::copy_n(ex.target_b.data(), plane, batch.targets_b.data() + i * plane);
      RandomStream noise(noise_seeds_[pos]);
      float* z = batch.noise_z.data() + i * plane;
      for (std::size_t j = 0; j < plane; ++j) {
        z[j] = static_cast<float>(noise.next_uniform(-1.0, 1.0));
      }
      batch.indices.push_back(idx);
    }
    cursor_ += take;
    return batch;
  }

  // Number of batches one epoch yields.
  std::size_t batch_count() const {
    return (order_.size() + static_cast<std::size_t>(batch_size_) - 1) /
           static_cast<std::size_t>(batch_size_);
  }

 private:
  const Corpus& corpus_;
  std::int64_t batch_size_;
  std::vector<std::size_t> order_;
  std::vector<std::uint64_t> noise_seeds_;
  std::size_t cursor_ = 0;
};

}  // namespace chroma
