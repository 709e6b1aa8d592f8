#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "spst/extractor.hpp"
#include "spst/image.hpp"
#include "spst/parallel.hpp"
#include "spst/stats.hpp"
#include "spst/tile_store.hpp"
#include "spst/tiling.hpp"

namespace spst {

struct GridParams {
  int block = 512;
  int margin = 256;
  int threads = 0;  // 0 = all cores
  // Content tiles beyond this many bytes are spilled to a temporary file.
  std::size_t content_budget_bytes = SIZE_MAX;
};

// Image dims after replicate padding to a multiple of the deepest stride,
// with the grid built on them.
inline BlockGrid make_grid(const TapGeometry& deepest, int height, int width,
                           const GridParams& p) {
  return BlockGrid(round_up(height, deepest.stride), round_up(width, deepest.stride), p.block,
                   p.margin, deepest.stride);
}

namespace detail {

template <typename T>
Tensor<T> padded_image(const Tensor<T>& x, const BlockGrid& grid) {
  return pad_replicate(x, grid.image_h(), grid.image_w());
}

// Blocks in groups of at most `threads`; each group runs in parallel and its
// results are consumed in block order, so reductions never depend on timing.
template <typename Result, typename Work, typename Consume>
void ordered_sweep(const std::vector<Block>& blocks, int threads, Work&& work, Consume&& consume) {
  const int n = static_cast<int>(blocks.size());
  const int wave = std::max(1, threads <= 0 ? default_threads() : threads);
  for (int start = 0; start < n; start += wave) {
    const int stop = std::min(n, start + wave);
    std::vector<std::optional<Result>> results(static_cast<std::size_t>(stop - start));
    parallel_for(start, stop, wave, [&](int i) {
      results[static_cast<std::size_t>(i - start)] = work(blocks[static_cast<std::size_t>(i)]);
    });
    for (int i = start; i < stop; ++i) {
      consume(blocks[static_cast<std::size_t>(i)], std::move(*results[static_cast<std::size_t>(i - start)]));
    }
  }
}

}  // namespace detail

// First pass: global statistics of `taps` accumulated block by block from the
// inner crop of each block's features. Forward only; nothing is kept for a
// reverse sweep.
template <typename T>
StatsMap stats_pass(const Tensor<T>& x, const Network<T>& net, const GridParams& params,
                    std::vector<std::string> taps = {}) {
  require_rank3(x, "stats_pass");
  if (taps.empty()) taps = net.spec().style_tap_names();
  const BlockGrid grid = make_grid(net.deepest(), x.height(), x.width(), params);
  const Tensor<T> xp = detail::padded_image(x, grid);
  std::map<std::string, TapGeometry> geom;
  std::map<std::string, StatsAccumulator> acc;
  for (const auto& t : taps) {
    geom[t] = net.geometry(t);
    acc.emplace(t, StatsAccumulator(geom[t].channels));
  }
  using Partial = std::map<std::string, StatsAccumulator>;
  detail::ordered_sweep<Partial>(
      partition(grid), params.threads,
      [&](const Block& b) {
        const Tensor<T> xb = crop(xp, b.padded.x0, b.padded.y0, b.padded.w, b.padded.h);
        const TapOutputs<T> f = net.forward(xb, false, taps);
        Partial part;
        for (const auto& t : taps) {
          const Rect r = feature_inner_crop(b, geom[t]);
          StatsAccumulator a(geom[t].channels);
          memory::CategoryScope scope(memory::Category::activation);
          a.accumulate(crop(f.at(t), r.x0, r.y0, r.w, r.h));
          part.emplace(t, std::move(a));
        }
        return part;
      },
      [&](const Block&, Partial part) {
        for (auto& [t, a] : part) acc.at(t).merge(a);
      });
  StatsMap out;
  for (const auto& [t, a] : acc) out[t] = a.finalize();
  return out;
}

template <typename T>
StatsMap stats_pass(const Image<T>& x, const Network<T>& net, const GridParams& params,
                    std::vector<std::string> taps = {}) {
  return stats_pass(x.tensor(), net, params, std::move(taps));
}

// Whole-image statistics from a single forward pass (oracle for small images).
template <typename T>
StatsMap stats_global(const Tensor<T>& x, const Network<T>& net,
                      std::vector<std::string> taps = {}) {
  if (taps.empty()) taps = net.spec().style_tap_names();
  const BlockGrid grid = make_grid(net.deepest(), x.height(), x.width(), GridParams{});
  const TapOutputs<T> f = net.forward(detail::padded_image(x, grid), false, taps);
  StatsMap out;
  for (const auto& t : taps) out[t] = compute_stats(f.at(t));
  return out;
}

// Content-tap features of `u`, swept block by block and stored as the inner
// crop of each block.
template <typename T>
TileStore<T> content_tiles(const Tensor<T>& u, const Network<T>& net, const GridParams& params) {
  const std::string tap = net.spec().content_tap.name;
  const TapGeometry g = net.geometry(tap);
  const BlockGrid grid = make_grid(net.deepest(), u.height(), u.width(), params);
  const Tensor<T> up = detail::padded_image(u, grid);
  TileStore<T> store(g.channels, grid.image_h() / g.stride, grid.image_w() / g.stride,
                     params.content_budget_bytes);
  detail::ordered_sweep<Tensor<T>>(
      partition(grid), params.threads,
      [&](const Block& b) {
        const Tensor<T> ub = crop(up, b.padded.x0, b.padded.y0, b.padded.w, b.padded.h);
        const TapOutputs<T> f = net.forward(ub, false, {tap});
        const Rect r = feature_inner_crop(b, g);
        return crop(f.at(tap), r.x0, r.y0, r.w, r.h);
      },
      [&](const Block& b, Tensor<T> tile) {
        memory::CategoryScope scope(memory::Category::general);
        store.add(feature_inner_global(b, g), Tensor<T>(tile.shape(), tile.values()));
      });
  return store;
}

// Everything the loss needs besides the current image: the extractor, the
// style statistics, the content features (absent for texture synthesis) and
// the weights.
template <typename T>
struct TransferProblem {
  std::shared_ptr<const Network<T>> net;
  StatsMap style_stats;
  std::optional<TileStore<T>> content;
  LossWeights weights;
  GridParams grid;
  int height = 0;
  int width = 0;

  double lambda_c() const {
    if (!content) return 0.0;
    return weights.effective_lambda_c(static_cast<std::size_t>(content->channels()) *
                                      content->height() * content->width());
  }

  void validate() const {
    if (!net) throw ConfigError("transfer problem has no extractor");
    for (const auto& t : net->spec().style_taps) {
      auto it = style_stats.find(t.name);
      if (it == style_stats.end()) throw ConfigError("missing style statistics for tap " + t.name);
      if (it->second.channels != net->geometry(t.name).channels) {
        throw ConfigError("style statistics for tap " + t.name + " have the wrong channel count");
      }
      if (!weights.style.count(t.name)) throw ConfigError("missing loss weights for tap " + t.name);
    }
    if (content) {
      const TapGeometry g = net->geometry(net->spec().content_tap.name);
      const BlockGrid grid = make_grid(net->deepest(), height, width, this->grid);
      if (content->channels() != g.channels || content->height() != grid.image_h() / g.stride ||
          content->width() != grid.image_w() / g.stride) {
        throw ConfigError("content features do not match the image geometry");
      }
    }
  }
};

template <typename T>
TransferProblem<T> make_transfer_problem(std::shared_ptr<const Network<T>> net,
                                         const Tensor<T>& content, StatsMap style_stats,
                                         LossWeights weights, GridParams grid) {
  TransferProblem<T> p;
  p.content.emplace(content_tiles(content, *net, grid));
  p.net = std::move(net);
  p.style_stats = std::move(style_stats);
  p.weights = std::move(weights);
  p.grid = grid;
  p.height = content.height();
  p.width = content.width();
  p.validate();
  return p;
}

template <typename T>
TransferProblem<T> make_texture_problem(std::shared_ptr<const Network<T>> net, int height,
                                        int width, StatsMap style_stats, LossWeights weights,
                                        GridParams grid) {
  TransferProblem<T> p;
  p.net = std::move(net);
  p.style_stats = std::move(style_stats);
  p.weights = std::move(weights);
  p.weights.lambda_c = 0.0;
  p.grid = grid;
  p.height = height;
  p.width = width;
  p.validate();
  return p;
}

template <typename T>
struct LossGrad {
  double loss = 0.0;
  double content = 0.0;
  std::map<std::string, StyleTerms> style;
  Tensor<T> grad;  // (3, h, w)
  bool degenerate = false;

  double style_total() const {
    double s = 0.0;
    for (const auto& [t, v] : style) s += v.total();
    return s;
  }
};

namespace detail {

template <typename T>
void check_input(const Tensor<T>& x, const TransferProblem<T>& p) {
  p.validate();
  require_rank3(x, "loss_grad");
  if (x.channels() != 3 || x.height() != p.height || x.width() != p.width) {
    throw ConfigError("image " + shape_string(x.shape()) + " does not match the problem (" +
                      std::to_string(p.height) + "x" + std::to_string(p.width) + ")");
  }
}

// Feature-level gradients for one evaluated region. `region` is the region's
// origin and size in padded-image pixels; `inner` (same frame) bounds the
// content loss value counted for it.
template <typename T>
std::map<std::string, Tensor<T>> tap_gradients(const TapOutputs<T>& f, const TransferProblem<T>& p,
                                               const StatsMap& stats_x, const Rect& region,
                                               const Rect& inner, double& content_loss,
                                               bool& degenerate) {
  const Network<T>& net = *p.net;
  std::map<std::string, Tensor<T>> grads;
  for (const auto& t : net.spec().style_taps) {
    auto g = style_layer_loss_grad(f.at(t.name), stats_x.at(t.name), p.style_stats.at(t.name),
                                   p.weights.style.at(t.name));
    degenerate = degenerate || g.degenerate;
    grads[t.name] = std::move(g.grad);
  }
  content_loss = 0.0;
  const double lambda = p.lambda_c();
  if (p.content && lambda != 0.0) {
    const std::string& tap = net.spec().content_tap.name;
    const int s = net.geometry(tap).stride;
    const Tensor<T>& v = f.at(tap);
    const Tensor<T> ref =
        p.content->assemble({region.x0 / s, region.y0 / s, v.width(), v.height()});
    auto cg = content_loss_grad(v, ref, lambda);
    const int cx0 = (inner.x0 - region.x0) / s, cy0 = (inner.y0 - region.y0) / s;
    const int cw = (inner.w + s - 1) / s, ch = (inner.h + s - 1) / s;
    double sum = 0.0;
    for (int c = 0; c < v.channels(); ++c) {
      for (int y = cy0; y < cy0 + ch; ++y) {
        for (int x = cx0; x < cx0 + cw; ++x) {
          const double d = static_cast<double>(v.at(c, y, x)) - ref.at(c, y, x);
          sum += d * d;
        }
      }
    }
    content_loss = lambda * sum;
    auto it = grads.find(tap);
    if (it == grads.end()) {
      grads[tap] = std::move(cg.grad);
    } else {
      for (std::size_t i = 0; i < it->second.size(); ++i) it->second[i] += cg.grad[i];
    }
  }
  return grads;
}

}  // namespace detail

// Transfer loss and its exact pixel gradient, computed block by block.
// Pass 1 aggregates the global style statistics of x; pass 2 re-evaluates each
// margin-padded block, injects the feature gradients (global statistics held
// fixed), back-propagates and keeps only the block's inner pixel gradient.
template <typename T>
LossGrad<T> loss_grad(const Tensor<T>& x, const TransferProblem<T>& p) {
  detail::check_input(x, p);
  const Network<T>& net = *p.net;
  const BlockGrid grid = make_grid(net.deepest(), p.height, p.width, p.grid);
  const Tensor<T> xp = detail::padded_image(x, grid);

  LossGrad<T> out;
  const StatsMap stats_x = stats_pass(xp, net, p.grid);
  for (const auto& t : net.spec().style_taps) {
    out.style[t.name] =
        style_loss_terms(stats_x.at(t.name), p.style_stats.at(t.name), p.weights.style.at(t.name));
  }

  Tensor<T> grad_padded({3, grid.image_h(), grid.image_w()});
  struct BlockResult {
    double content = 0.0;
    bool degenerate = false;
  };
  detail::ordered_sweep<BlockResult>(
      partition(grid), p.grid.threads,
      [&](const Block& b) {
        memory::CategoryScope scope(memory::Category::activation);
        BlockResult r;
        const Tensor<T> xb = crop(xp, b.padded.x0, b.padded.y0, b.padded.w, b.padded.h);
        const TapOutputs<T> f = net.forward(xb, true);
        const auto grads =
            detail::tap_gradients(f, p, stats_x, b.padded, b.inner, r.content, r.degenerate);
        const Tensor<T> gb = net.backward(f, grads);
        const Tensor<T> inner = crop(gb, b.inner.x0 - b.padded.x0, b.inner.y0 - b.padded.y0,
                                     b.inner.w, b.inner.h);
        paste(grad_padded, inner, b.inner.x0, b.inner.y0);
        return r;
      },
      [&](const Block&, BlockResult r) {
        out.content += r.content;
        out.degenerate = out.degenerate || r.degenerate;
      });

  out.loss = out.style_total() + out.content;
  out.grad = pad_replicate_adjoint(grad_padded, p.height, p.width);
  return out;
}

template <typename T>
LossGrad<T> loss_grad(const Image<T>& x, const TransferProblem<T>& p) {
  return loss_grad(x.tensor(), p);
}

// Same contract as loss_grad from one whole-image forward and reverse sweep.
// Only feasible when all activations fit in memory; used as the oracle.
template <typename T>
LossGrad<T> loss_grad_global(const Tensor<T>& x, const TransferProblem<T>& p) {
  detail::check_input(x, p);
  const Network<T>& net = *p.net;
  const BlockGrid grid = make_grid(net.deepest(), p.height, p.width, p.grid);
  const Tensor<T> xp = detail::padded_image(x, grid);

  LossGrad<T> out;
  const TapOutputs<T> f = net.forward(xp, true);
  StatsMap stats_x;
  for (const auto& t : net.spec().style_taps) {
    stats_x[t.name] = compute_stats(f.at(t.name));
    out.style[t.name] =
        style_loss_terms(stats_x.at(t.name), p.style_stats.at(t.name), p.weights.style.at(t.name));
  }
  const Rect whole{0, 0, grid.image_w(), grid.image_h()};
  const auto grads = detail::tap_gradients(f, p, stats_x, whole, whole, out.content, out.degenerate);
  out.loss = out.style_total() + out.content;
  out.grad = pad_replicate_adjoint(net.backward(f, grads), p.height, p.width);
  return out;
}

template <typename T>
LossGrad<T> loss_grad_global(const Image<T>& x, const TransferProblem<T>& p) {
  return loss_grad_global(x.tensor(), p);
}

}  // namespace spst
