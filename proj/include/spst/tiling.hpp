#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "spst/errors.hpp"
#include "spst/extractor.hpp"

namespace spst {

struct Rect {
  int x0 = 0, y0 = 0, w = 0, h = 0;

  int x1() const { return x0 + w; }
  int y1() const { return y0 + h; }
  bool contains(const Rect& r) const {
    return r.x0 >= x0 && r.y0 >= y0 && r.x1() <= x1() && r.y1() <= y1();
  }
  friend bool operator==(const Rect&, const Rect&) = default;
};

struct Margins {
  int left = 0, top = 0, right = 0, bottom = 0;
  friend bool operator==(const Margins&, const Margins&) = default;
};

// One tile: the inner rect it owns and the margin-padded rect it is evaluated
// on, clipped to the image.
struct Block {
  Rect inner;
  Rect padded;
  Margins present_margin;
};

// Partition parameters. Block and margin must be multiples of `align` (the
// deepest tap stride) so every padded rect starts on a pooling boundary.
class BlockGrid {
 public:
  BlockGrid(int image_h, int image_w, int block = 512, int margin = 256, int align = 1)
      : image_h_(image_h), image_w_(image_w), block_(block), margin_(margin), align_(align) {
    if (image_h < 1 || image_w < 1) throw GeometryError("block grid: image must be at least 1x1");
    if (align < 1) throw GeometryError("block grid: alignment must be positive");
    if (block < align || block % align != 0) {
      throw GeometryError("block size " + std::to_string(block) +
                          " must be a positive multiple of the deepest stride " +
                          std::to_string(align));
    }
    if (margin < 0 || margin % align != 0) {
      throw GeometryError("margin " + std::to_string(margin) +
                          " must be a non-negative multiple of the deepest stride " +
                          std::to_string(align));
    }
  }

  int image_h() const { return image_h_; }
  int image_w() const { return image_w_; }
  int block() const { return block_; }
  int margin() const { return margin_; }
  int align() const { return align_; }
  int rows() const { return (image_h_ + block_ - 1) / block_; }
  int cols() const { return (image_w_ + block_ - 1) / block_; }

 private:
  int image_h_, image_w_, block_, margin_, align_;
};

// Row-major list of blocks whose inner rects tile the image exactly.
inline std::vector<Block> partition(const BlockGrid& g) {
  std::vector<Block> out;
  out.reserve(static_cast<std::size_t>(g.rows()) * g.cols());
  for (int r = 0; r < g.rows(); ++r) {
    for (int c = 0; c < g.cols(); ++c) {
      Block b;
      b.inner.x0 = c * g.block();
      b.inner.y0 = r * g.block();
      b.inner.w = std::min(g.block(), g.image_w() - b.inner.x0);
      b.inner.h = std::min(g.block(), g.image_h() - b.inner.y0);
      const int px0 = std::max(0, b.inner.x0 - g.margin());
      const int py0 = std::max(0, b.inner.y0 - g.margin());
      const int px1 = std::min(g.image_w(), b.inner.x1() + g.margin());
      const int py1 = std::min(g.image_h(), b.inner.y1() + g.margin());
      b.padded = {px0, py0, px1 - px0, py1 - py0};
      b.present_margin = {b.inner.x0 - px0, b.inner.y0 - py0, px1 - b.inner.x1(),
                          py1 - b.inner.y1()};
      out.push_back(b);
    }
  }
  return out;
}

// Rect, in the coordinates of the block's own tap feature map, holding the
// features of the block's inner region. Sizes round up so ragged right and
// bottom blocks still cover the last feature column and row.
inline Rect feature_inner_crop(const Block& b, const TapGeometry& g) {
  const int s = g.stride;
  if (b.present_margin.left % s != 0 || b.present_margin.top % s != 0 || b.inner.x0 % s != 0 ||
      b.inner.y0 % s != 0) {
    throw GeometryError("block margin or offset is not a multiple of stride " + std::to_string(s));
  }
  return {b.present_margin.left / s, b.present_margin.top / s, (b.inner.w + s - 1) / s,
          (b.inner.h + s - 1) / s};
}

// Where the block's inner features sit in the whole-image feature map.
inline Rect feature_inner_global(const Block& b, const TapGeometry& g) {
  const Rect local = feature_inner_crop(b, g);
  return {b.inner.x0 / g.stride, b.inner.y0 / g.stride, local.w, local.h};
}

// Dims an image is replicate-padded to before partitioning.
inline int round_up(int v, int m) { return (v + m - 1) / m * m; }

}  // namespace spst
