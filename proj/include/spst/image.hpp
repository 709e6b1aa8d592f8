#pragma once

#include <algorithm>
#include <cmath>

#include "spst/tensor.hpp"

namespace spst {

// RGB image with values nominally in [0,1], stored as a (3, h, w) tensor.
// Values are only clamped when encoded to a file.
template <typename T>
class Image {
 public:
  Image() = default;
  Image(int height, int width, T fill = T(0)) : pixels_(make_shape(height, width), fill) {}
  explicit Image(Tensor<T> pixels) : pixels_(std::move(pixels)) {
    if (pixels_.rank() != 3 || pixels_.channels() != 3) {
      throw ShapeError("image tensor must be (3,h,w), got " + shape_string(pixels_.shape()));
    }
    make_shape(pixels_.height(), pixels_.width());
  }

  int height() const { return pixels_.height(); }
  int width() const { return pixels_.width(); }
  static constexpr int channels() { return 3; }

  const Tensor<T>& tensor() const { return pixels_; }
  Tensor<T>& tensor() { return pixels_; }

  T& at(int c, int y, int x) { return pixels_.at(c, y, x); }
  const T& at(int c, int y, int x) const { return pixels_.at(c, y, x); }

  template <typename U>
  Image<U> cast() const {
    return Image<U>(pixels_.template cast<U>());
  }

  friend bool operator==(const Image& a, const Image& b) { return a.pixels_ == b.pixels_; }

 private:
  static Shape make_shape(int h, int w) {
    if (h < 1 || w < 1) throw ShapeError("image dimensions must be at least 1x1");
    return {3, h, w};
  }

  Tensor<T> pixels_;
};

inline int ceil_div(int a, int b) { return (a + b - 1) / b; }

// Area-average downscaling. Output dims are ceil(input / factor); each output
// pixel is the mean of the source pixels in its (possibly truncated) box.
template <typename T>
Image<T> resize_down(const Image<T>& img, int factor) {
  if (factor < 1) throw GeometryError("resize_down: factor must be >= 1");
  if (factor == 1) return img;
  const int H = img.height(), W = img.width();
  const int oh = ceil_div(H, factor), ow = ceil_div(W, factor);
  Image<T> out(oh, ow);
  for (int c = 0; c < 3; ++c) {
    for (int oy = 0; oy < oh; ++oy) {
      const int y0 = oy * factor, y1 = std::min(y0 + factor, H);
      for (int ox = 0; ox < ow; ++ox) {
        const int x0 = ox * factor, x1 = std::min(x0 + factor, W);
        double acc = 0.0;
        for (int y = y0; y < y1; ++y) {
          for (int x = x0; x < x1; ++x) acc += img.at(c, y, x);
        }
        out.at(c, oy, ox) = static_cast<T>(acc / ((y1 - y0) * (x1 - x0)));
      }
    }
  }
  return out;
}

// Bilinear upscaling with half-pixel-centred sampling and edge clamping.
// The target dims default to (2h, 2w); pipelines pass the next scale's exact
// dims so ceil rounding never drifts.
template <typename T>
Image<T> resize_up2(const Image<T>& img, int target_h = 0, int target_w = 0) {
  const int H = img.height(), W = img.width();
  const int oh = target_h > 0 ? target_h : 2 * H;
  const int ow = target_w > 0 ? target_w : 2 * W;
  Image<T> out(oh, ow);
  const double sy = static_cast<double>(H) / oh, sx = static_cast<double>(W) / ow;

  struct Tap {
    int i0, i1;
    double f;
  };
  auto taps = [](int n_out, int n_in, double scale) {
    std::vector<Tap> t(static_cast<std::size_t>(n_out));
    for (int o = 0; o < n_out; ++o) {
      double src = (o + 0.5) * scale - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(n_in - 1));
      const int i0 = static_cast<int>(std::floor(src));
      const int i1 = std::min(i0 + 1, n_in - 1);
      t[static_cast<std::size_t>(o)] = {i0, i1, src - i0};
    }
    return t;
  };
  const auto ty = taps(oh, H, sy);
  const auto tx = taps(ow, W, sx);
  for (int c = 0; c < 3; ++c) {
    for (int oy = 0; oy < oh; ++oy) {
      const Tap& a = ty[static_cast<std::size_t>(oy)];
      for (int ox = 0; ox < ow; ++ox) {
        const Tap& b = tx[static_cast<std::size_t>(ox)];
        const double top = (1 - b.f) * img.at(c, a.i0, b.i0) + b.f * img.at(c, a.i0, b.i1);
        const double bot = (1 - b.f) * img.at(c, a.i1, b.i0) + b.f * img.at(c, a.i1, b.i1);
        out.at(c, oy, ox) = static_cast<T>((1 - a.f) * top + a.f * bot);
      }
    }
  }
  return out;
}

// Replicates the right column and bottom row until dims reach (h, w).
template <typename T>
Tensor<T> pad_replicate(const Tensor<T>& src, int h, int w) {
  require_rank3(src, "pad_replicate");
  if (h < src.height() || w < src.width()) throw ShapeError("pad_replicate: target too small");
  if (h == src.height() && w == src.width()) return src;
  Tensor<T> out({src.channels(), h, w});
  for (int c = 0; c < src.channels(); ++c) {
    for (int y = 0; y < h; ++y) {
      const int sy = std::min(y, src.height() - 1);
      for (int x = 0; x < w; ++x) out.at(c, y, x) = src.at(c, sy, std::min(x, src.width() - 1));
    }
  }
  return out;
}

// Adjoint of pad_replicate: gradients of replicated pixels fold back onto the
// edge pixel they were copied from.
template <typename T>
Tensor<T> pad_replicate_adjoint(const Tensor<T>& grad, int h, int w) {
  require_rank3(grad, "pad_replicate_adjoint");
  if (h > grad.height() || w > grad.width()) throw ShapeError("pad adjoint: target too large");
  if (h == grad.height() && w == grad.width()) return grad;
  Tensor<T> out({grad.channels(), h, w});
  for (int c = 0; c < grad.channels(); ++c) {
    for (int y = 0; y < grad.height(); ++y) {
      const int ty = std::min(y, h - 1);
      for (int x = 0; x < grad.width(); ++x) {
        out.at(c, ty, std::min(x, w - 1)) += grad.at(c, y, x);
      }
    }
  }
  return out;
}

}  // namespace spst
