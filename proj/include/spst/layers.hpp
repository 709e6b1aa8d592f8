#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "spst/tensor.hpp"

namespace spst {

enum class LayerKind { conv, relu, pool };
enum class PoolKind { avg, max };

// One layer of the feature extractor. Conv weights are (out, in, k, k) and
// kept in f64 so the same spec can be evaluated in either compute dtype.
struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::string name;

  // conv
  int in_ch = 0;
  int out_ch = 0;
  int k = 1;
  int stride = 1;
  int pad = 0;
  Tensor<double> weight;
  Tensor<double> bias;

  // pool
  PoolKind pool = PoolKind::avg;

  static LayerSpec conv(std::string name, int in_ch, int out_ch, int k, int stride = 1) {
    if (k < 1 || k % 2 == 0) throw GeometryError("conv " + name + ": kernel size must be odd");
    if (in_ch < 1 || out_ch < 1 || stride < 1) {
      throw GeometryError("conv " + name + ": invalid channel count or stride");
    }
    LayerSpec l;
    l.kind = LayerKind::conv;
    l.name = std::move(name);
    l.in_ch = in_ch;
    l.out_ch = out_ch;
    l.k = k;
    l.stride = stride;
    l.pad = (k - 1) / 2;
    return l;
  }

  static LayerSpec relu(std::string name) {
    LayerSpec l;
    l.kind = LayerKind::relu;
    l.name = std::move(name);
    return l;
  }

  static LayerSpec pool_layer(std::string name, PoolKind kind, int k) {
    if (k < 1) throw GeometryError("pool " + name + ": window must be positive");
    LayerSpec l;
    l.kind = LayerKind::pool;
    l.name = std::move(name);
    l.pool = kind;
    l.k = k;
    l.stride = k;
    return l;
  }

  bool has_weights() const { return !weight.empty(); }

  // Image pixels per output pixel contributed by this layer.
  int spatial_stride() const { return kind == LayerKind::relu ? 1 : stride; }
};

inline int conv_out_dim(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// Output shape of a layer for a given (c, h, w) input shape.
inline Shape layer_output_shape(const Shape& in, const LayerSpec& layer) {
  if (in.size() != 3) throw ShapeError("layer " + layer.name + ": expected (c,h,w) input");
  switch (layer.kind) {
    case LayerKind::relu:
      return in;
    case LayerKind::conv: {
      if (in[0] != layer.in_ch) {
        throw ShapeError("conv " + layer.name + ": expected " + std::to_string(layer.in_ch) +
                         " input channels, got " + std::to_string(in[0]));
      }
      const int h = conv_out_dim(in[1], layer.k, layer.stride, layer.pad);
      const int w = conv_out_dim(in[2], layer.k, layer.stride, layer.pad);
      if (h < 1 || w < 1) throw GeometryError("conv " + layer.name + ": input too small");
      return {layer.out_ch, h, w};
    }
    case LayerKind::pool: {
      const int h = in[1] / layer.k;
      const int w = in[2] / layer.k;
      if (h < 1 || w < 1) {
        throw GeometryError("pool " + layer.name + ": input " + shape_string(in) +
                            " smaller than the window");
      }
      return {in[0], h, w};
    }
  }
  return in;
}

namespace detail {

template <typename T>
void check_conv_weights(const LayerSpec& l, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (weight.shape() != Shape{l.out_ch, l.in_ch, l.k, l.k} || bias.shape() != Shape{l.out_ch}) {
    throw ShapeError("conv " + l.name + ": weights not bound or mis-shaped");
  }
}

// Valid output range [lo, hi) along one axis for kernel tap `kk`.
inline void conv_valid_range(int out_dim, int in_dim, int kk, int stride, int pad, int& lo,
                             int& hi) {
  // need 0 <= o*stride + kk - pad < in_dim
  const int off = kk - pad;
  lo = off >= 0 ? 0 : (-off + stride - 1) / stride;
  hi = in_dim - off <= 0 ? 0 : (in_dim - off - 1) / stride + 1;
  hi = std::min(hi, out_dim);
  lo = std::min(lo, hi);
}

}  // namespace detail

// Cross-correlation with zero padding. Every output pixel accumulates bias
// first, then input channels, then kernel rows and columns, in that order,
// whatever the image size. Blockwise and whole-image evaluation therefore
// agree bit for bit wherever their receptive fields agree.
template <typename T>
Tensor<T> conv_forward(const Tensor<T>& in, const LayerSpec& l, const Tensor<T>& weight,
                       const Tensor<T>& bias) {
  detail::check_conv_weights(l, weight, bias);
  const Shape os = layer_output_shape(in.shape(), l);
  Tensor<T> out(os);
  const int H = in.height(), W = in.width(), OH = os[1], OW = os[2];
  const int k = l.k, s = l.stride, p = l.pad;
  for (int oc = 0; oc < l.out_ch; ++oc) {
    T* o = out.channel(oc);
    std::fill(o, o + static_cast<std::size_t>(OH) * OW, bias[static_cast<std::size_t>(oc)]);
    for (int ic = 0; ic < l.in_ch; ++ic) {
      const T* src = in.channel(ic);
      const T* wk = &weight[((static_cast<std::size_t>(oc) * l.in_ch + ic) * k) * k];
      for (int ky = 0; ky < k; ++ky) {
        int oy0, oy1;
        detail::conv_valid_range(OH, H, ky, s, p, oy0, oy1);
        for (int kx = 0; kx < k; ++kx) {
          const T wv = wk[ky * k + kx];
          int ox0, ox1;
          detail::conv_valid_range(OW, W, kx, s, p, ox0, ox1);
          for (int oy = oy0; oy < oy1; ++oy) {
            const T* srow = src + static_cast<std::size_t>(oy * s + ky - p) * W + (kx - p);
            T* orow = o + static_cast<std::size_t>(oy) * OW;
            if (s == 1) {
              for (int ox = ox0; ox < ox1; ++ox) orow[ox] += wv * srow[ox];
            } else {
              for (int ox = ox0; ox < ox1; ++ox) orow[ox] += wv * srow[ox * s];
            }
          }
        }
      }
    }
  }
  return out;
}

// Input gradient of conv: transposed-kernel correlation of grad_out.
template <typename T>
Tensor<T> conv_backward_input(const Tensor<T>& grad_out, const Shape& in_shape,
                              const LayerSpec& l, const Tensor<T>& weight) {
  const Shape os = layer_output_shape(in_shape, l);
  require_same_shape(grad_out.shape(), os, "conv backward");
  Tensor<T> gin(in_shape);
  const int H = in_shape[1], W = in_shape[2], OH = os[1], OW = os[2];
  const int k = l.k, s = l.stride, p = l.pad;
  for (int ic = 0; ic < l.in_ch; ++ic) {
    T* g = gin.channel(ic);
    for (int oc = 0; oc < l.out_ch; ++oc) {
      const T* go = grad_out.channel(oc);
      const T* wk = &weight[((static_cast<std::size_t>(oc) * l.in_ch + ic) * k) * k];
      for (int ky = 0; ky < k; ++ky) {
        int oy0, oy1;
        detail::conv_valid_range(OH, H, ky, s, p, oy0, oy1);
        for (int kx = 0; kx < k; ++kx) {
          const T wv = wk[ky * k + kx];
          int ox0, ox1;
          detail::conv_valid_range(OW, W, kx, s, p, ox0, ox1);
          for (int oy = oy0; oy < oy1; ++oy) {
            T* grow = g + static_cast<std::size_t>(oy * s + ky - p) * W + (kx - p);
            const T* gorow = go + static_cast<std::size_t>(oy) * OW;
            if (s == 1) {
              for (int ox = ox0; ox < ox1; ++ox) grow[ox] += wv * gorow[ox];
            } else {
              for (int ox = ox0; ox < ox1; ++ox) grow[ox * s] += wv * gorow[ox];
            }
          }
        }
      }
    }
  }
  return gin;
}

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& in) {
  Tensor<T> out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > T(0) ? in[i] : T(0);
  return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& grad_out, const Tensor<T>& saved_input) {
  require_same_shape(grad_out.shape(), saved_input.shape(), "relu backward");
  Tensor<T> gin(saved_input.shape());
  for (std::size_t i = 0; i < gin.size(); ++i) {
    gin[i] = saved_input[i] > T(0) ? grad_out[i] : T(0);
  }
  return gin;
}

template <typename T>
Tensor<T> pool_forward(const Tensor<T>& in, const LayerSpec& l) {
  const Shape os = layer_output_shape(in.shape(), l);
  Tensor<T> out(os);
  const int k = l.k;
  const T inv = T(1) / static_cast<T>(k * k);
  for (int c = 0; c < os[0]; ++c) {
    for (int oy = 0; oy < os[1]; ++oy) {
      for (int ox = 0; ox < os[2]; ++ox) {
        T acc = l.pool == PoolKind::avg ? T(0) : -std::numeric_limits<T>::infinity();
        for (int dy = 0; dy < k; ++dy) {
          for (int dx = 0; dx < k; ++dx) {
            const T v = in.at(c, oy * k + dy, ox * k + dx);
            if (l.pool == PoolKind::avg) {
              acc += v;
            } else if (v > acc) {
              acc = v;
            }
          }
        }
        out.at(c, oy, ox) = l.pool == PoolKind::avg ? acc * inv : acc;
      }
    }
  }
  return out;
}

// Average pooling spreads each gradient uniformly over its window; max pooling
// routes it to the first maximal element in row-major scan order.
template <typename T>
Tensor<T> pool_backward(const Tensor<T>& grad_out, const Tensor<T>& saved_input,
                        const LayerSpec& l) {
  const Shape os = layer_output_shape(saved_input.shape(), l);
  require_same_shape(grad_out.shape(), os, "pool backward");
  Tensor<T> gin(saved_input.shape());
  const int k = l.k;
  const T inv = T(1) / static_cast<T>(k * k);
  for (int c = 0; c < os[0]; ++c) {
    for (int oy = 0; oy < os[1]; ++oy) {
      for (int ox = 0; ox < os[2]; ++ox) {
        const T g = grad_out.at(c, oy, ox);
        if (l.pool == PoolKind::avg) {
          for (int dy = 0; dy < k; ++dy) {
            for (int dx = 0; dx < k; ++dx) gin.at(c, oy * k + dy, ox * k + dx) += g * inv;
          }
        } else {
          int by = 0, bx = 0;
          T best = -std::numeric_limits<T>::infinity();
          for (int dy = 0; dy < k; ++dy) {
            for (int dx = 0; dx < k; ++dx) {
              const T v = saved_input.at(c, oy * k + dy, ox * k + dx);
              if (v > best) {
                best = v;
                by = dy;
                bx = dx;
              }
            }
          }
          gin.at(c, oy * k + by, ox * k + bx) += g;
        }
      }
    }
  }
  return gin;
}

// Layer weights cast to the compute dtype. Relu and pool layers carry none.
template <typename T>
struct BoundWeights {
  Tensor<T> weight;
  Tensor<T> bias;
};

template <typename T>
BoundWeights<T> bind(const LayerSpec& l) {
  if (l.kind != LayerKind::conv) return {};
  return {l.weight.template cast<T>(), l.bias.template cast<T>()};
}

template <typename T>
Tensor<T> layer_forward(const Tensor<T>& input, const LayerSpec& l, const BoundWeights<T>& w) {
  require_rank3(input, "layer_forward");
  switch (l.kind) {
    case LayerKind::conv:
      return conv_forward(input, l, w.weight, w.bias);
    case LayerKind::relu:
      return relu_forward(input);
    case LayerKind::pool:
      return pool_forward(input, l);
  }
  return input;
}

template <typename T>
Tensor<T> layer_forward(const Tensor<T>& input, const LayerSpec& l) {
  return layer_forward(input, l, bind<T>(l));
}

// d(<grad_out, layer(input)>)/d(input). Only input gradients: weights are fixed.
template <typename T>
Tensor<T> layer_backward_input(const Tensor<T>& grad_out, const Tensor<T>& saved_input,
                               const LayerSpec& l, const BoundWeights<T>& w) {
  require_rank3(saved_input, "layer_backward_input");
  switch (l.kind) {
    case LayerKind::conv:
      return conv_backward_input(grad_out, saved_input.shape(), l, w.weight);
    case LayerKind::relu:
      return relu_backward(grad_out, saved_input);
    case LayerKind::pool:
      return pool_backward(grad_out, saved_input, l);
  }
  return grad_out;
}

template <typename T>
Tensor<T> layer_backward_input(const Tensor<T>& grad_out, const Tensor<T>& saved_input,
                               const LayerSpec& l) {
  return layer_backward_input(grad_out, saved_input, l, bind<T>(l));
}

}  // namespace spst
