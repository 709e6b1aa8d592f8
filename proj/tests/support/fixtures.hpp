#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "spst/image.hpp"
#include "spst/rng.hpp"

namespace spst::fixture {

template <typename T>
Tensor<T> random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(std::move(shape));
  Rng rng(seed);
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

inline std::vector<double> random_vector(std::size_t n, std::uint64_t seed, double lo = -1.0,
                                         double hi = 1.0) {
  std::vector<double> v(n);
  Rng rng(seed);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

template <typename T>
Image<T> noise_image(int h, int w, std::uint64_t seed) {
  return Image<T>(random_tensor<T>({3, h, w}, seed, 0.0, 1.0));
}

// Smooth seeded field: a sum of a few random low-frequency sinusoids per
// channel, mapped into [0,1].
template <typename T>
Image<T> smooth_image(int h, int w, std::uint64_t seed, int waves = 4) {
  Rng rng(seed);
  Image<T> img(h, w);
  for (int c = 0; c < 3; ++c) {
    std::vector<double> fx, fy, ph, amp;
    for (int k = 0; k < waves; ++k) {
      fx.push_back(rng.uniform(-1.5, 1.5) * 2.0 * M_PI / w);
      fy.push_back(rng.uniform(-1.5, 1.5) * 2.0 * M_PI / h);
      ph.push_back(rng.uniform(0.0, 2.0 * M_PI));
      amp.push_back(rng.uniform(0.2, 1.0));
    }
    double total = 0.0;
    for (double a : amp) total += a;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double s = 0.0;
        for (int k = 0; k < waves; ++k) s += amp[k] * std::sin(fx[k] * x + fy[k] * y + ph[k]);
        img.at(c, y, x) = static_cast<T>(0.5 + 0.45 * s / total);
      }
    }
  }
  return img;
}

// Procedural "painting": a smooth colour wash overlaid with seeded elongated
// brush strokes of random colour, orientation and width.
template <typename T>
Image<T> painting(int h, int w, std::uint64_t seed, int strokes = 0) {
  Image<T> img = smooth_image<T>(h, w, seed * 7919 + 1, 3);
  Rng rng(seed);
  if (strokes <= 0) strokes = std::max(8, h * w / 400);
  for (int s = 0; s < strokes; ++s) {
    const double cx = rng.uniform(0, w), cy = rng.uniform(0, h);
    const double ang = rng.uniform(0, M_PI);
    const double len = rng.uniform(6, 24), wid = rng.uniform(1.5, 4.0);
    const double col[3] = {rng.uniform(), rng.uniform(), rng.uniform()};
    const double alpha = rng.uniform(0.5, 0.9);
    const double ca = std::cos(ang), sa = std::sin(ang);
    const int r = static_cast<int>(len + wid) + 1;
    for (int y = std::max(0, static_cast<int>(cy) - r); y < std::min(h, static_cast<int>(cy) + r); ++y) {
      for (int x = std::max(0, static_cast<int>(cx) - r); x < std::min(w, static_cast<int>(cx) + r); ++x) {
        const double dx = x - cx, dy = y - cy;
        const double along = dx * ca + dy * sa, across = -dx * sa + dy * ca;
        if (std::abs(along) > len || std::abs(across) > wid) continue;
        // ridged bristle texture across the stroke
        const double bristle = 0.85 + 0.15 * std::sin(across * 3.1 + along * 0.3);
        for (int c = 0; c < 3; ++c) {
          const double v = img.at(c, y, x);
          img.at(c, y, x) = static_cast<T>((1 - alpha) * v + alpha * col[c] * bristle);
        }
      }
    }
  }
  return img;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("spst_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace spst::fixture
