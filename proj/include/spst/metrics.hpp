#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "json.hpp"

#include "spst/pipeline.hpp"

namespace spst {

// 10 log10(1 / MSE) with the MSE taken over every channel value. Identical
// images give +infinity.
template <typename T>
double psnr(const Image<T>& a, const Image<T>& b) {
  require_same_shape(a.tensor().shape(), b.tensor().shape(), "psnr");
  double se = 0.0;
  const auto av = a.tensor().values();
  const auto bv = b.tensor().values();
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = static_cast<double>(av[i]) - static_cast<double>(bv[i]);
    se += d * d;
  }
  if (se == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(static_cast<double>(av.size()) / se);
}

template <typename T>
std::vector<double> luma(const Image<T>& img) {
  const std::size_t n = static_cast<std::size_t>(img.height()) * img.width();
  std::vector<double> y(n);
  const T* r = img.tensor().channel(0);
  const T* g = img.tensor().channel(1);
  const T* b = img.tensor().channel(2);
  for (std::size_t i = 0; i < n; ++i) y[i] = 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i];
  return y;
}

namespace detail {

inline std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> w(static_cast<std::size_t>(size));
  const int r = size / 2;
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    w[static_cast<std::size_t>(i)] = std::exp(-(i - r) * (i - r) / (2 * sigma * sigma));
    sum += w[static_cast<std::size_t>(i)];
  }
  for (auto& v : w) v /= sum;
  return w;
}

// Separable 'valid' filtering of an h x w plane.
inline std::vector<double> filter_valid(const std::vector<double>& src, int h, int w,
                                        const std::vector<double>& k) {
  const int n = static_cast<int>(k.size());
  const int ow = w - n + 1, oh = h - n + 1;
  std::vector<double> rows(static_cast<std::size_t>(h) * ow, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += k[static_cast<std::size_t>(i)] * src[static_cast<std::size_t>(y) * w + x + i];
      rows[static_cast<std::size_t>(y) * ow + x] = s;
    }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow, 0.0);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += k[static_cast<std::size_t>(i)] * rows[static_cast<std::size_t>(y + i) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = s;
    }
  return out;
}

}  // namespace detail

// Mean SSIM on Rec. 601 luma: 11x11 Gaussian window (sigma 1.5), K1 0.01,
// K2 0.03, dynamic range 1, valid windows only.
template <typename T>
double ssim(const Image<T>& a, const Image<T>& b) {
  require_same_shape(a.tensor().shape(), b.tensor().shape(), "ssim");
  constexpr int kWin = 11;
  if (std::min(a.height(), a.width()) < kWin) {
    throw ShapeError("ssim needs images of at least 11x11");
  }
  const int h = a.height(), w = a.width();
  const auto x = luma(a), y = luma(b);
  std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto k = detail::gaussian_window(kWin, 1.5);
  const auto mx = detail::filter_valid(x, h, w, k);
  const auto my = detail::filter_valid(y, h, w, k);
  const auto sxx = detail::filter_valid(xx, h, w, k);
  const auto syy = detail::filter_valid(yy, h, w, k);
  const auto sxy = detail::filter_valid(xy, h, w, k);
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double total = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = sxx[i] - mx[i] * mx[i];
    const double vy = syy[i] - my[i] * my[i];
    const double cxy = sxy[i] - mx[i] * my[i];
    total += ((2 * mx[i] * my[i] + c1) * (2 * cxy + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
  }
  return total / static_cast<double>(mx.size());
}

struct GramDistance {
  double weighted = 0.0;    // sum_L w_L ||G_L(x) - G_L(v)||_F^2
  double unweighted = 0.0;  // same with w_L = 1
};

inline GramDistance gram_distance(const StatsMap& x, const StatsMap& v, const LossWeights& w) {
  GramDistance d;
  for (const auto& [tap, sx] : x) {
    const auto& sv = v.at(tap);
    require_same_channels(sx, sv);
    double f = 0.0;
    for (std::size_t i = 0; i < sx.gram.size(); ++i) {
      const double e = sx.gram[i] - sv.gram[i];
      f += e * e;
    }
    d.unweighted += f;
    auto it = w.style.find(tap);
    d.weighted += (it == w.style.end() ? 1.0 : it->second.gram) * f;
  }
  return d;
}

// Blockwise Gram style distance. Default weights are the extractor's 1/n_c^2.
template <typename T>
GramDistance gram_distance(const Image<T>& x, const Image<T>& v, const Network<T>& net,
                           const GridParams& grid, const std::optional<LossWeights>& weights = {}) {
  const LossWeights w = weights ? *weights : default_loss_weights(style_tap_channels(net));
  return gram_distance(stats_pass(x, net, grid), stats_pass(v, net, grid), w);
}

struct IdentityReport {
  std::string style_id;
  double psnr = 0.0;
  bool psnr_infinite = false;
  double ssim = 0.0;
  double gram_distance = 0.0;
  double gram_distance_unweighted = 0.0;
  double initial_gram_distance = 0.0;
  double wall_time = 0.0;
  std::string config_hash;

  nlohmann::json to_json() const {
    return {{"style_id", style_id},
            {"psnr", psnr_infinite ? nlohmann::json("inf") : nlohmann::json(psnr)},
            {"psnr_infinite", psnr_infinite},
            {"ssim", ssim},
            {"gram", gram_distance},
            {"gram_unweighted", gram_distance_unweighted},
            {"gram_initial", initial_gram_distance},
            {"seconds", wall_time},
            {"config_hash", config_hash}};
  }

  std::string json_line() const { return to_json().dump(); }

  // Appends one row, writing the header first when the file is new.
  void append_csv(const std::string& path) const {
    const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
    std::ofstream out(path, std::ios::app);
    if (!out) throw IoError("cannot open " + path + " for appending");
    if (fresh) out << "style_id,psnr,ssim,gram,seconds,config_hash\n";
    out << style_id << ',' << (psnr_infinite ? std::string("inf") : std::to_string(psnr)) << ','
        << ssim << ',' << gram_distance << ',' << wall_time << ',' << config_hash << '\n';
  }
};

// What the pipeline starts from at full resolution when content == style:
// the coarsest content scale carried up through the pyramid unoptimized.
template <typename T>
Image<T> pyramid_init(const Image<T>& u, int n_scales) {
  const auto dims = scale_dims(u.height(), u.width(), n_scales);
  Image<T> x = detail::downscale(u, scale_factor(n_scales, 1));
  for (std::size_t s = 1; s < dims.size(); ++s) x = resize_up2(x, dims[s].height, dims[s].width);
  return x;
}

struct IdentityRun {
  IdentityReport report;
  Image<float> image;
  std::vector<ScaleReport> scales;
};

// Reproduce a painting from itself: content and style are both `style`.
template <typename T>
IdentityRun identity_test(std::shared_ptr<const Network<T>> net, const Image<T>& style,
                          const RunConfig& cfg, const std::string& style_id,
                          const ProgressCallback& progress = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  auto run = multiscale_transfer(net, style, style, cfg, progress);
  IdentityRun out;
  auto& r = out.report;
  r.style_id = style_id;
  r.config_hash = cfg.config_hash;
  r.psnr = psnr(run.image, style);
  r.psnr_infinite = std::isinf(r.psnr);
  r.ssim = ssim(run.image, style);
  const auto ref = stats_pass(style, *net, cfg.grid);
  const LossWeights w = cfg.weights ? *cfg.weights : default_loss_weights(style_tap_channels(*net));
  const auto g = gram_distance(stats_pass(run.image, *net, cfg.grid), ref, w);
  r.gram_distance = g.weighted;
  r.gram_distance_unweighted = g.unweighted;
  r.initial_gram_distance =
      gram_distance(stats_pass(pyramid_init(style, cfg.n_scales), *net, cfg.grid), ref, w).weighted;
  r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out.image = run.image.template cast<float>();
  out.scales = std::move(run.scales);
  return out;
}

}  // namespace spst
