#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "spst/layers.hpp"
#include "spst/rng.hpp"

namespace spst {

// Maps [0,1] RGB to network input: y[c] = (x[src(c)] * range - mean[c]) / std[c],
// where src reverses the channel order when bgr is set.
struct Preprocess {
  double range = 1.0;
  std::array<double, 3> mean = {0.0, 0.0, 0.0};
  std::array<double, 3> std = {1.0, 1.0, 1.0};
  bool bgr = false;

  int source_channel(int c) const { return bgr ? 2 - c : c; }

  friend bool operator==(const Preprocess&, const Preprocess&) = default;
};

// A named layer whose output feeds the losses. Taps always sit on relu layers.
struct Tap {
  std::string name;
  int layer = -1;
};

struct ExtractorSpec {
  std::vector<LayerSpec> layers;
  std::vector<Tap> style_taps;
  Tap content_tap;
  Preprocess preprocess;

  int layer_index(const std::string& name) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (layers[i].name == name) return static_cast<int>(i);
    }
    throw KeyError("unknown layer: " + name);
  }

  const Tap& tap(const std::string& name) const {
    for (const auto& t : style_taps) {
      if (t.name == name) return t;
    }
    if (content_tap.name == name) return content_tap;
    throw KeyError("unknown tap: " + name);
  }

  bool has_tap(const std::string& name) const {
    return content_tap.name == name ||
           std::any_of(style_taps.begin(), style_taps.end(),
                       [&](const Tap& t) { return t.name == name; });
  }

  std::vector<std::string> style_tap_names() const {
    std::vector<std::string> out;
    for (const auto& t : style_taps) out.push_back(t.name);
    return out;
  }

  // Last layer any tap needs; later layers are never evaluated.
  int last_needed_layer() const {
    int last = content_tap.layer;
    for (const auto& t : style_taps) last = std::max(last, t.layer);
    return last;
  }

  // Checks layer chaining and that every tap names a relu.
  void validate() const {
    int ch = 3;
    for (const auto& l : layers) {
      if (l.kind == LayerKind::conv) {
        if (l.in_ch != ch) {
          throw ShapeError("layer " + l.name + " expects " + std::to_string(l.in_ch) +
                           " channels but receives " + std::to_string(ch));
        }
        ch = l.out_ch;
      }
    }
    auto check = [&](const Tap& t) {
      if (t.layer < 0 || t.layer >= static_cast<int>(layers.size())) {
        throw KeyError("tap " + t.name + " points outside the layer list");
      }
      if (layers[static_cast<std::size_t>(t.layer)].kind != LayerKind::relu) {
        throw ConfigError("tap " + t.name + " must point at a relu layer");
      }
    };
    for (const auto& t : style_taps) check(t);
    check(content_tap);
  }

  bool weights_bound() const {
    return std::all_of(layers.begin(), layers.end(), [](const LayerSpec& l) {
      return l.kind != LayerKind::conv || l.has_weights();
    });
  }
};

inline Tap make_tap(const ExtractorSpec& spec, const std::string& layer_name) {
  return Tap{layer_name, spec.layer_index(layer_name)};
}

// Image pixels per feature pixel, receptive-field radius in image pixels
// (measured from the feature pixel's own stride cell) and channel count.
struct TapGeometry {
  int stride = 1;
  int rf_radius = 0;
  int channels = 3;
};

inline TapGeometry layer_geometry(const ExtractorSpec& spec, int layer) {
  TapGeometry g;
  for (int i = 0; i <= layer; ++i) {
    const LayerSpec& l = spec.layers[static_cast<std::size_t>(i)];
    if (l.kind == LayerKind::relu) continue;
    g.rf_radius += g.stride * ((l.k - 1) / 2);
    g.stride *= l.stride;
    if (l.kind == LayerKind::conv) g.channels = l.out_ch;
  }
  return g;
}

inline TapGeometry tap_geometry(const ExtractorSpec& spec, const std::string& tap) {
  return layer_geometry(spec, spec.tap(tap).layer);
}

// Largest stride and receptive field over all taps; the block grid aligns to
// the former and margins are compared against the latter.
inline TapGeometry deepest_geometry(const ExtractorSpec& spec) {
  TapGeometry out{1, 0, 3};
  auto fold = [&](const Tap& t) {
    const TapGeometry g = layer_geometry(spec, t.layer);
    out.stride = std::max(out.stride, g.stride);
    out.rf_radius = std::max(out.rf_radius, g.rf_radius);
  };
  for (const auto& t : spec.style_taps) fold(t);
  fold(spec.content_tap);
  return out;
}

// Desk-scale extractor: three 3x3 conv groups separated by 2x2 average pools.
// Weights are He-scaled normals rounded to f32 so they survive an f32 file
// round trip exactly.
inline ExtractorSpec tinynet(std::uint64_t seed = 0) {
  ExtractorSpec spec;
  spec.layers = {
      LayerSpec::conv("conv1_1", 3, 8, 3),   LayerSpec::relu("relu1_1"),
      LayerSpec::pool_layer("pool1", PoolKind::avg, 2),
      LayerSpec::conv("conv2_1", 8, 16, 3),  LayerSpec::relu("relu2_1"),
      LayerSpec::pool_layer("pool2", PoolKind::avg, 2),
      LayerSpec::conv("conv3_1", 16, 32, 3), LayerSpec::relu("relu3_1"),
  };
  Rng rng(seed ^ 0x5eed7a1e5eedULL);
  for (auto& l : spec.layers) {
    if (l.kind != LayerKind::conv) continue;
    const double scale = std::sqrt(2.0 / (l.in_ch * l.k * l.k));
    l.weight = Tensor<double>({l.out_ch, l.in_ch, l.k, l.k});
    for (auto& v : l.weight.values()) v = static_cast<float>(scale * rng.normal());
    l.bias = Tensor<double>({l.out_ch});
    for (auto& v : l.bias.values()) v = static_cast<float>(0.05 * rng.normal());
  }
  spec.style_taps = {make_tap(spec, "relu1_1"), make_tap(spec, "relu2_1"),
                     make_tap(spec, "relu3_1")};
  spec.content_tap = make_tap(spec, "relu2_1");
  spec.validate();
  return spec;
}

// VGG19 feature trunk up to relu5_1, without weights. Style taps are the
// first relu of each group, the content tap is relu4_2.
inline ExtractorSpec vgg19_spec(PoolKind pool = PoolKind::avg) {
  ExtractorSpec spec;
  const std::array<int, 5> widths = {64, 128, 256, 512, 512};
  const std::array<int, 5> depth = {2, 2, 4, 4, 4};
  int in = 3;
  for (int g = 0; g < 5; ++g) {
    const int convs = g == 4 ? 1 : depth[static_cast<std::size_t>(g)];
    for (int j = 0; j < convs; ++j) {
      const std::string id = std::to_string(g + 1) + "_" + std::to_string(j + 1);
      spec.layers.push_back(LayerSpec::conv("conv" + id, in, widths[static_cast<std::size_t>(g)], 3));
      spec.layers.push_back(LayerSpec::relu("relu" + id));
      in = widths[static_cast<std::size_t>(g)];
    }
    if (g < 4) spec.layers.push_back(LayerSpec::pool_layer("pool" + std::to_string(g + 1), pool, 2));
  }
  for (int g = 1; g <= 5; ++g) {
    spec.style_taps.push_back(make_tap(spec, "relu" + std::to_string(g) + "_1"));
  }
  spec.content_tap = make_tap(spec, "relu4_2");
  spec.preprocess.mean = {0.485, 0.456, 0.406};
  spec.preprocess.std = {0.229, 0.224, 0.225};
  spec.validate();
  return spec;
}

// Values kept by a forward sweep for the reverse sweep: relu inputs and
// max-pool inputs. Conv and average pool only need shapes.
template <typename T>
struct ForwardTrace {
  std::vector<Shape> input_shapes;
  std::vector<Tensor<T>> saved;
};

template <typename T>
struct TapOutputs {
  std::map<std::string, Tensor<T>> taps;
  ForwardTrace<T> trace;
  bool has_trace = false;

  const Tensor<T>& at(const std::string& name) const {
    auto it = taps.find(name);
    if (it == taps.end()) throw KeyError("tap not evaluated: " + name);
    return it->second;
  }
};

// An ExtractorSpec with weights cast to the compute dtype. Immutable after
// construction; safe to share across block workers.
template <typename T>
class Network {
 public:
  explicit Network(ExtractorSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    if (!spec_.weights_bound()) throw ConfigError("extractor weights are not bound");
    last_ = spec_.last_needed_layer();
    for (int i = 0; i <= last_; ++i) bound_.push_back(bind<T>(spec_.layers[static_cast<std::size_t>(i)]));
    deepest_ = deepest_geometry(spec_);
    for (int i = 0; i <= last_; ++i) {
      std::vector<std::string> names;
      for (const auto& t : spec_.style_taps) {
        if (t.layer == i) names.push_back(t.name);
      }
      if (spec_.content_tap.layer == i &&
          std::find(names.begin(), names.end(), spec_.content_tap.name) == names.end()) {
        names.push_back(spec_.content_tap.name);
      }
      taps_at_.push_back(std::move(names));
    }
  }

  const ExtractorSpec& spec() const { return spec_; }
  const TapGeometry& deepest() const { return deepest_; }
  TapGeometry geometry(const std::string& tap) const { return tap_geometry(spec_, tap); }

  // Runs preprocessing and the layers up to the deepest tap. `wanted` limits
  // which taps are recorded (empty = all). Every tensor created here is booked
  // as activation memory.
  TapOutputs<T> forward(const Tensor<T>& image, bool save_for_backward,
                        const std::vector<std::string>& wanted = {}) const {
    memory::CategoryScope scope(memory::Category::activation);
    require_rank3(image, "forward_taps");
    if (image.channels() != 3) throw ShapeError("forward_taps expects a 3-channel image");
    if (image.height() < deepest_.stride || image.width() < deepest_.stride) {
      throw GeometryError("input " + std::to_string(image.height()) + "x" +
                          std::to_string(image.width()) +
                          " is smaller than one feature pixel at stride " +
                          std::to_string(deepest_.stride));
    }
    TapOutputs<T> out;
    out.has_trace = save_for_backward;
    Tensor<T> cur = preprocess(image);
    for (int i = 0; i <= last_; ++i) {
      const LayerSpec& l = spec_.layers[static_cast<std::size_t>(i)];
      if (save_for_backward) {
        out.trace.input_shapes.push_back(cur.shape());
        const bool keep =
            l.kind == LayerKind::relu || (l.kind == LayerKind::pool && l.pool == PoolKind::max);
        out.trace.saved.push_back(keep ? cur : Tensor<T>());
      }
      cur = layer_forward(cur, l, bound_[static_cast<std::size_t>(i)]);
      for (const auto& name : taps_at_[static_cast<std::size_t>(i)]) {
        if (wanted.empty() || std::find(wanted.begin(), wanted.end(), name) != wanted.end()) {
          out.taps.emplace(name, cur);
        }
      }
    }
    return out;
  }

  // Back-propagates feature gradients injected at taps down to the raw image.
  // Missing taps contribute nothing.
  Tensor<T> backward(const TapOutputs<T>& fwd,
                     const std::map<std::string, Tensor<T>>& tap_grads) const {
    memory::CategoryScope scope(memory::Category::activation);
    if (!fwd.has_trace) throw ConfigError("backward requires a forward pass with saved state");
    Tensor<T> grad;
    for (int i = last_; i >= 0; --i) {
      for (const auto& name : taps_at_[static_cast<std::size_t>(i)]) {
        auto it = tap_grads.find(name);
        if (it == tap_grads.end()) continue;
        if (grad.empty()) {
          grad = it->second;
        } else {
          require_same_shape(grad.shape(), it->second.shape(), "tap gradient");
          for (std::size_t j = 0; j < grad.size(); ++j) grad[j] += it->second[j];
        }
      }
      if (grad.empty()) continue;
      const LayerSpec& l = spec_.layers[static_cast<std::size_t>(i)];
      const Shape& in_shape = fwd.trace.input_shapes[static_cast<std::size_t>(i)];
      switch (l.kind) {
        case LayerKind::conv:
          grad = conv_backward_input(grad, in_shape, l, bound_[static_cast<std::size_t>(i)].weight);
          break;
        case LayerKind::relu:
          grad = relu_backward(grad, fwd.trace.saved[static_cast<std::size_t>(i)]);
          break;
        case LayerKind::pool:
          if (l.pool == PoolKind::max) {
            grad = pool_backward(grad, fwd.trace.saved[static_cast<std::size_t>(i)], l);
          } else {
            grad = pool_backward(grad, Tensor<T>(in_shape), l);
          }
          break;
      }
    }
    const Shape img_shape = fwd.trace.input_shapes.empty() ? Shape{} : fwd.trace.input_shapes[0];
    if (grad.empty()) return Tensor<T>(img_shape);
    return preprocess_backward(grad);
  }

 private:
  Tensor<T> preprocess(const Tensor<T>& image) const {
    const Preprocess& p = spec_.preprocess;
    Tensor<T> out(image.shape());
    for (int c = 0; c < 3; ++c) {
      const T* src = image.channel(p.source_channel(c));
      T* dst = out.channel(c);
      const T a = static_cast<T>(p.range / p.std[static_cast<std::size_t>(c)]);
      const T b = static_cast<T>(p.mean[static_cast<std::size_t>(c)] / p.std[static_cast<std::size_t>(c)]);
      for (std::size_t i = 0; i < image.plane(); ++i) dst[i] = a * src[i] - b;
    }
    return out;
  }

  Tensor<T> preprocess_backward(const Tensor<T>& grad) const {
    const Preprocess& p = spec_.preprocess;
    Tensor<T> out(grad.shape());
    for (int c = 0; c < 3; ++c) {
      const T* src = grad.channel(c);
      T* dst = out.channel(p.source_channel(c));
      const T a = static_cast<T>(p.range / p.std[static_cast<std::size_t>(c)]);
      for (std::size_t i = 0; i < grad.plane(); ++i) dst[i] = a * src[i];
    }
    return out;
  }

  ExtractorSpec spec_;
  std::vector<BoundWeights<T>> bound_;
  std::vector<std::vector<std::string>> taps_at_;
  TapGeometry deepest_;
  int last_ = -1;
};

template <typename T>
TapOutputs<T> forward_taps(const Tensor<T>& x, const Network<T>& net, bool save_for_backward) {
  return net.forward(x, save_for_backward);
}

}  // namespace spst
