#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "chroma/colorspace.hpp"
#include "chroma/dataset.hpp"
#include "chroma/image_io.hpp"
#include "chroma/network.hpp"
#include "chroma/parallel.hpp"
#include "chroma/rng.hpp"
#include "chroma/training.hpp"

namespace chroma {

inline constexpr double kPsnrCap = 99.0;

// Mean squared error over both chrominance planes in native LAB units.
inline double ab_mse(const LabImage& pred, const LabImage& truth) {
  if (pred.width != truth.width || pred.height != truth.height) {
    throw ShapeError("ab_mse image size mismatch: " +
                     std::to_string(pred.width) + "x" +
                     std::to_string(pred.height) + " vs " +
                     std::to_string(truth.width) + "x" +
                     std::to_string(truth.height));
  }
  const std::size_t n = pred.a.size();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = static_cast<double>(pred.a[i]) - truth.a[i];
    const double db = static_cast<double>(pred.b[i]) - truth.b[i];
    acc += da * da + db * db;
  }
  return acc / (2.0 * static_cast<double>(n));
}

// Peak signal-to-noise ratio on unit-interval channels, capped at 99 dB so
// exact matches stay finite in reports.
inline double psnr_rgb(const RgbImage& pred, const RgbImage& truth) {
  if (pred.width != truth.width || pred.height != truth.height) {
    throw ShapeError("psnr_rgb image size mismatch: " +
                     std::to_string(pred.width) + "x" +
                     std::to_string(pred.height) + " vs " +
                     std::to_string(truth.width) + "x" +
                     std::to_string(truth.height));
  }
  double mse = 0.0;
  for (std::size_t i = 0; i < pred.pixels.size(); ++i) {
    const double d = static_cast<double>(pred.pixels[i]) - truth.pixels[i];
    mse += d * d;
  }
  mse /= static_cast<double>(pred.pixels.size());
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, -10.0 * std::log10(mse));
}

struct ColorizationResult {
  RgbImage output;
  std::optional<double> ab_mse;
  std::optional<double> psnr_rgb;
};

namespace detail {

// Center-crop to square and resize to the model's trained side.
inline RgbImage fit_to_model(const RgbImage& img, int side) {
  return resize_bilinear(center_crop_square(img), side, side);
}

template <typename T>
Tensor<T> draw_noise(std::uint64_t z_seed, std::uint64_t tag, int side) {
  RandomStream rs(derive_seed(z_seed, stream::kInference, tag));
  Tensor<T> z({1, 1, side, side});
  for (std::int64_t i = 0; i < z.size(); ++i) {
    z.data()[i] = static_cast<T>(rs.next_uniform(-1.0, 1.0));
  }
  return z;
}

}  // namespace detail

// Runs the full pipeline on one image: grayscale it (color inputs are
// reduced to L first), sample z, run both channel generators, reassemble to
// sRGB. Deterministic in (model, image, z_seed). When ground truth is given
// the chrominance and PSNR metrics are filled in.
inline ColorizationResult colorize(const Model<float>& model,
                                   const RgbImage& input, std::uint64_t z_seed,
                                   const RgbImage* truth = nullptr) {
  const int side = model.config().image_size;
  const RgbImage fitted = detail::fit_to_model(input, side);
  const Tensor<float> L = extract_grayscale(fitted);

  Tensor<float> planes[2];
  for (ChannelTarget c : {ChannelTarget::A, ChannelTarget::B}) {
    const ChannelGan<float>& gan = model.gan(c);
    const Tensor<float> z =
        detail::draw_noise<float>(z_seed, channel_tag(c), side);
    std::optional<Tensor<float>> feats = gan.features(L, false);
    planes[channel_tag(c)] =
        gan.gen.forward(L, z, feats ? &*feats : nullptr, false);
  }

  ColorizationResult result;
  result.output = assemble(L, planes[0], planes[1]);
  if (truth != nullptr) {
    const RgbImage truth_fitted = detail::fit_to_model(*truth, side);
    LabImage pred = LabImage::blank(side, side);
    for (std::int64_t i = 0; i < L.size(); ++i) {
      pred.L[static_cast<std::size_t>(i)] = L.data()[i] * kLScale;
      pred.a[static_cast<std::size_t>(i)] = planes[0].data()[i] * kAbScale;
      pred.b[static_cast<std::size_t>(i)] = planes[1].data()[i] * kAbScale;
    }
    result.ab_mse = ab_mse(pred, rgb_to_lab(truth_fitted));
    result.psnr_rgb = psnr_rgb(result.output, truth_fitted);
  }
  return result;
}

struct EvalRow {
  std::string path;
  double ab_mse = 0.0;
  double psnr_db = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  double mean_ab_mse = 0.0, median_ab_mse = 0.0;
  double mean_psnr = 0.0, median_psnr = 0.0;
};

struct GridItem {
  RgbImage input_gray;
  RgbImage prediction;
  std::optional<RgbImage> truth;
};

// One row per item, columns [input | prediction | truth], 2-pixel white
// separators between tiles.
inline void emit_grid(const std::vector<GridItem>& items,
                      const std::filesystem::path& path) {
  if (items.empty()) throw PreconditionError("emit_grid with no items");
  const int tile_w = items[0].input_gray.width;
  const int tile_h = items[0].input_gray.height;
  const bool with_truth = items[0].truth.has_value();
  for (const GridItem& item : items) {
    const bool uniform =
        item.input_gray.width == tile_w && item.input_gray.height == tile_h &&
        item.prediction.width == tile_w && item.prediction.height == tile_h &&
        item.truth.has_value() == with_truth &&
        (!item.truth || (item.truth->width == tile_w &&
                         item.truth->height == tile_h));
    if (!uniform) {
      throw PreconditionError("emit_grid requires uniform tiles");
    }
  }
  constexpr int kGap = 2;
  const int cols = with_truth ? 3 : 2;
  const int rows = static_cast<int>(items.size());
  const int width = cols * tile_w + (cols - 1) * kGap;
  const int height = rows * tile_h + (rows - 1) * kGap;
  RgbImage canvas = RgbImage::blank(width, height);
  std::fill(canvas.pixels.begin(), canvas.pixels.end(), 1.0f);  // white

  const auto blit = [&](const RgbImage& tile, int row, int col) {
    const int ox = col * (tile_w + kGap);
    const int oy = row * (tile_h + kGap);
    for (int y = 0; y < tile_h; ++y) {
      const float* src =
          tile.pixels.data() + static_cast<std::size_t>(y) * tile_w * 3;
      float* dst = canvas.pixels.data() +
                   (static_cast<std::size_t>(oy + y) * width + ox) * 3;
      std::copy(src, src + static_cast<std::size_t>(tile_w) * 3, dst);
    }
  };
  for (int r = 0; r < rows; ++r) {
    blit(items[static_cast<std::size_t>(r)].input_gray, r, 0);
    blit(items[static_cast<std::size_t>(r)].prediction, r, 1);
    if (with_truth) blit(*items[static_cast<std::size_t>(r)].truth, r, 2);
  }
  write_png(path, canvas);
}

// Gray render of an L plane (zero chrominance), used for grid input tiles.
inline RgbImage render_grayscale(const Tensor<float>& L_norm) {
  Tensor<float> zero(L_norm.shape());
  return assemble(L_norm, zero, zero);
}

// Colorizes every test image against itself as ground truth. Row order
// follows the given file order regardless of worker count; the per-image
// noise seed is derived from (z_seed, row index).
inline EvalReport evaluate(const Model<float>& model,
                           const std::vector<std::filesystem::path>& files,
                           std::uint64_t z_seed,
                           std::vector<GridItem>* grid_items = nullptr) {
  if (files.empty()) throw PreconditionError("evaluate on an empty test set");
  EvalReport report;
  report.rows.resize(files.size());
  std::vector<GridItem> grid(grid_items ? files.size() : 0);
  parallel_for(files.size(), [&](std::size_t i) {
    const RgbImage truth = read_png(files[i]);
    const ColorizationResult res =
        colorize(model, truth, derive_seed(z_seed, i), &truth);
    report.rows[i] = {files[i].filename().string(), *res.ab_mse,
                      *res.psnr_rgb};
    if (grid_items) {
      const RgbImage fitted =
          detail::fit_to_model(truth, model.config().image_size);
      grid[i] = {render_grayscale(extract_grayscale(fitted)), res.output,
                 detail::fit_to_model(truth, model.config().image_size)};
    }
  });
  if (grid_items) *grid_items = std::move(grid);

  std::vector<double> ab, ps;
  for (const EvalRow& row : report.rows) {
    ab.push_back(row.ab_mse);
    ps.push_back(row.psnr_db);
    report.mean_ab_mse += row.ab_mse;
    report.mean_psnr += row.psnr_db;
  }
  report.mean_ab_mse /= static_cast<double>(ab.size());
  report.mean_psnr /= static_cast<double>(ps.size());
  const auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  };
  report.median_ab_mse = median(ab);
  report.median_psnr = median(ps);
  return report;
}

// CSV with a `path,ab_mse,psnr_db` header, one row per image, and a final
// AGGREGATE row carrying the means.
inline void write_report_csv(const std::filesystem::path& path,
                             const EvalReport& report) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write report " + path.string());
  const auto fmt = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return std::string(buf);
  };
  out << "path,ab_mse,psnr_db\n";
  for (const EvalRow& row : report.rows) {
    out << row.path << ',' << fmt(row.ab_mse) << ',' << fmt(row.psnr_db)
        << '\n';
  }
  out << "AGGREGATE," << fmt(report.mean_ab_mse) << ','
      << fmt(report.mean_psnr) << '\n';
}

}  // namespace chroma
