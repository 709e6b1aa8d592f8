#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "spst/container.hpp"
#include "spst/tensor.hpp"

namespace spst {

// Global second-order statistics of one tap: Gram matrix (1/n_p) V^T V,
// per-channel mean and population std, and the feature-pixel count.
struct LayerStats {
  int channels = 0;
  std::vector<double> gram;  // channels x channels, row-major
  std::vector<double> mean;
  std::vector<double> std;
  std::uint64_t n_p = 0;

  double g(int a, int b) const { return gram[static_cast<std::size_t>(a) * channels + b]; }
};

// Running sums for LayerStats. Always f64 so blockwise and single-pass sums
// agree to rounding regardless of the feature dtype.
class StatsAccumulator {
 public:
  StatsAccumulator() = default;
  explicit StatsAccumulator(int channels)
      : channels_(channels),
        sum_outer_(static_cast<std::size_t>(channels) * channels, 0.0),
        sum_(static_cast<std::size_t>(channels), 0.0) {}

  int channels() const { return channels_; }
  std::uint64_t count() const { return count_; }
  const std::vector<double>& sum_outer() const { return sum_outer_; }
  const std::vector<double>& sum() const { return sum_; }

  // Adds every pixel of a (c, h, w) feature map. Products are added to the
  // running sums one pixel at a time in row-major order.
  template <typename T>
  void accumulate(const Tensor<T>& v) {
    require_rank3(v, "accumulate");
    if (v.channels() != channels_) {
      throw ShapeError("accumulate: expected " + std::to_string(channels_) + " channels, got " +
                       std::to_string(v.channels()));
    }
    const std::size_t n = v.plane();
    for (int a = 0; a < channels_; ++a) {
      const T* va = v.channel(a);
      double s = sum_[static_cast<std::size_t>(a)];
      for (std::size_t p = 0; p < n; ++p) s += va[p];
      sum_[static_cast<std::size_t>(a)] = s;
      for (int b = 0; b <= a; ++b) {
        const T* vb = v.channel(b);
        double acc = sum_outer_[static_cast<std::size_t>(a) * channels_ + b];
        for (std::size_t p = 0; p < n; ++p) {
          acc += static_cast<double>(va[p]) * static_cast<double>(vb[p]);
        }
        sum_outer_[static_cast<std::size_t>(a) * channels_ + b] = acc;
      }
    }
    count_ += n;
  }

  // Associative merge of another accumulator's sums.
  void merge(const StatsAccumulator& other) {
    if (other.channels_ != channels_) throw ShapeError("merge: channel mismatch");
    for (std::size_t i = 0; i < sum_outer_.size(); ++i) sum_outer_[i] += other.sum_outer_[i];
    for (std::size_t i = 0; i < sum_.size(); ++i) sum_[i] += other.sum_[i];
    count_ += other.count_;
  }

  LayerStats finalize() const {
    if (count_ == 0) throw EmptyError("finalize: no feature pixels accumulated");
    LayerStats s;
    s.channels = channels_;
    s.n_p = count_;
    const double inv = 1.0 / static_cast<double>(count_);
    const std::size_t c = static_cast<std::size_t>(channels_);
    s.gram.assign(c * c, 0.0);
    for (std::size_t a = 0; a < c; ++a) {
      for (std::size_t b = 0; b <= a; ++b) {
        const double v = sum_outer_[a * c + b] * inv;
        s.gram[a * c + b] = v;
        s.gram[b * c + a] = v;
      }
    }
    s.mean.resize(c);
    s.std.resize(c);
    for (std::size_t a = 0; a < c; ++a) {
      s.mean[a] = sum_[a] * inv;
      s.std[a] = std::sqrt(std::max(s.gram[a * c + a] - s.mean[a] * s.mean[a], 0.0));
    }
    return s;
  }

 private:
  int channels_ = 0;
  std::vector<double> sum_outer_;  // lower triangle used
  std::vector<double> sum_;
  std::uint64_t count_ = 0;
};

template <typename T>
LayerStats compute_stats(const Tensor<T>& v) {
  StatsAccumulator acc(v.channels());
  acc.accumulate(v);
  return acc.finalize();
}

// Per-tap weights of the Gram, mean and std terms.
struct StyleWeights {
  double gram = 1.0;
  double mean = 0.0;
  double std = 0.0;
};

struct LossWeights {
  // Content weight. When content_per_feature is set the effective weight is
  // lambda_c divided by the number of content feature values.
  double lambda_c = 1.0;
  bool content_per_feature = true;
  std::map<std::string, StyleWeights> style;

  double effective_lambda_c(std::size_t content_values) const {
    if (!content_per_feature) return lambda_c;
    return content_values ? lambda_c / static_cast<double>(content_values) : 0.0;
  }
};

// Default weighting: Gram 1/n_c^2 per tap, mean and std terms 10^3 times that.
template <typename TapChannels>
LossWeights default_loss_weights(const TapChannels& taps) {
  LossWeights w;
  for (const auto& [name, channels] : taps) {
    const double g = 1.0 / (static_cast<double>(channels) * channels);
    w.style[name] = {g, 1e3 * g, 1e3 * g};
  }
  return w;
}

struct StyleTerms {
  double gram = 0.0;
  double mean = 0.0;
  double std = 0.0;
  double total() const { return gram + mean + std; }
};

inline void require_same_channels(const LayerStats& a, const LayerStats& b) {
  if (a.channels != b.channels) {
    throw ShapeError("style statistics have " + std::to_string(a.channels) + " vs " +
                     std::to_string(b.channels) + " channels");
  }
}

// Weighted squared distances between two sets of statistics.
inline StyleTerms style_loss_terms(const LayerStats& x, const LayerStats& ref,
                                   const StyleWeights& w) {
  require_same_channels(x, ref);
  StyleTerms t;
  for (std::size_t i = 0; i < x.gram.size(); ++i) {
    const double d = x.gram[i] - ref.gram[i];
    t.gram += d * d;
  }
  for (std::size_t i = 0; i < x.mean.size(); ++i) {
    const double dm = x.mean[i] - ref.mean[i];
    const double ds = x.std[i] - ref.std[i];
    t.mean += dm * dm;
    t.std += ds * ds;
  }
  t.gram *= w.gram;
  t.mean *= w.mean;
  t.std *= w.std;
  return t;
}

// std values below this are treated as zero in the std-term gradient.
inline constexpr double kStdFloor = 1e-8;

template <typename T>
struct StyleLossGrad {
  StyleTerms terms;
  Tensor<T> grad;
  bool degenerate = false;
};

// Gradient of the weighted Gram + mean + std loss with respect to the feature
// slab `v`, with the image's global statistics `x` held fixed:
//   Gram: (4/n_p) V (G - G_ref)
//   mean: (2/n_p) (mean - mean_ref), broadcast over pixels
//   std:  (2/n_p) (V_kj - mean_j) (std_j - std_ref_j) / std_j
// n_p is the global pixel count. Each pixel's gradient depends only on that
// pixel, so any slab of the image can be processed independently.
template <typename T>
StyleLossGrad<T> style_layer_loss_grad(const Tensor<T>& v, const LayerStats& x,
                                       const LayerStats& ref, const StyleWeights& w) {
  require_rank3(v, "style_layer_loss_grad");
  require_same_channels(x, ref);
  if (v.channels() != x.channels) {
    throw ShapeError("style_layer_loss_grad: feature has " + std::to_string(v.channels()) +
                     " channels, statistics have " + std::to_string(x.channels));
  }
  StyleLossGrad<T> out;
  out.terms = style_loss_terms(x, ref, w);
  out.grad = Tensor<T>(v.shape());

  const std::size_t c = static_cast<std::size_t>(x.channels);
  const double inv_np = 1.0 / static_cast<double>(x.n_p);
  // grad[j][p] = offset_j + diag_j * V[j][p] + sum_a coupling[a][j] * V[a][p]
  std::vector<double> coupling(c * c), diag(c), offset(c);
  for (std::size_t i = 0; i < c * c; ++i) coupling[i] = 4.0 * inv_np * w.gram * (x.gram[i] - ref.gram[i]);
  for (std::size_t j = 0; j < c; ++j) {
    double sc = 0.0;
    if (x.std[j] >= kStdFloor) {
      sc = 2.0 * inv_np * w.std * (x.std[j] - ref.std[j]) / x.std[j];
    } else if (w.std != 0.0 && ref.std[j] != 0.0) {
      out.degenerate = true;
    }
    diag[j] = sc;
    offset[j] = 2.0 * inv_np * w.mean * (x.mean[j] - ref.mean[j]) - sc * x.mean[j];
  }

  const std::size_t n = v.plane();
  std::vector<double> row(n);
  for (std::size_t j = 0; j < c; ++j) {
    const T* vj = v.channel(static_cast<int>(j));
    for (std::size_t p = 0; p < n; ++p) row[p] = offset[j] + diag[j] * vj[p];
    for (std::size_t a = 0; a < c; ++a) {
      const double k = coupling[a * c + j];
      if (k == 0.0) continue;
      const T* va = v.channel(static_cast<int>(a));
      for (std::size_t p = 0; p < n; ++p) row[p] += k * va[p];
    }
    T* g = out.grad.channel(static_cast<int>(j));
    for (std::size_t p = 0; p < n; ++p) g[p] = static_cast<T>(row[p]);
  }
  return out;
}

template <typename T>
struct ContentLossGrad {
  double loss = 0.0;
  Tensor<T> grad;
};

// lambda_c * ||V - V_ref||^2 (plain sum of squares) and its gradient.
template <typename T>
ContentLossGrad<T> content_loss_grad(const Tensor<T>& v, const Tensor<T>& ref, double lambda_c) {
  require_same_shape(v.shape(), ref.shape(), "content_loss_grad");
  ContentLossGrad<T> out;
  out.grad = Tensor<T>(v.shape());
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double d = static_cast<double>(v[i]) - ref[i];
    s += d * d;
    out.grad[i] = static_cast<T>(2.0 * lambda_c * d);
  }
  out.loss = lambda_c * s;
  return out;
}

using StatsMap = std::map<std::string, LayerStats>;

// LayerStats records in the NSTW1 container: stats/<tap>/{gram,mean,std,count}.
inline std::vector<container::Record> stats_records(const StatsMap& stats) {
  std::vector<container::Record> recs;
  for (const auto& [tap, s] : stats) {
    const auto c = static_cast<std::uint32_t>(s.channels);
    const std::string base = "stats/" + tap + "/";
    recs.push_back({base + "gram", container::DType::f64, {c, c}, s.gram});
    recs.push_back({base + "mean", container::DType::f64, {c}, s.mean});
    recs.push_back({base + "std", container::DType::f64, {c}, s.std});
    recs.push_back({base + "count", container::DType::f64, {1}, {static_cast<double>(s.n_p)}});
  }
  return recs;
}

inline StatsMap stats_from_records(const std::vector<container::Record>& recs) {
  StatsMap out;
  for (const auto& r : recs) {
    if (r.name.rfind("stats/", 0) != 0) continue;
    const auto slash = r.name.rfind('/');
    const std::string tap = r.name.substr(6, slash - 6);
    const std::string field = r.name.substr(slash + 1);
    LayerStats& s = out[tap];
    if (field == "gram") {
      if (r.dims.size() != 2 || r.dims[0] != r.dims[1]) throw FormatError("bad gram record " + r.name);
      s.channels = static_cast<int>(r.dims[0]);
      s.gram = r.values;
    } else if (field == "mean") {
      s.mean = r.values;
    } else if (field == "std") {
      s.std = r.values;
    } else if (field == "count") {
      if (r.values.size() != 1) throw FormatError("bad count record " + r.name);
      s.n_p = static_cast<std::uint64_t>(r.values[0]);
    }
  }
  for (const auto& [tap, s] : out) {
    const auto c = static_cast<std::size_t>(s.channels);
    if (s.gram.size() != c * c || s.mean.size() != c || s.std.size() != c || s.n_p == 0) {
      throw FormatError("incomplete statistics for tap " + tap);
    }
  }
  return out;
}

inline void save_stats(const std::string& path, const StatsMap& stats) {
  container::write(path, stats_records(stats));
}

inline StatsMap load_stats(const std::string& path) {
  return stats_from_records(container::read(path));
}

}  // namespace spst
