#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "spst/container.hpp"
#include "spst/hash.hpp"
#include "spst/image_io.hpp"
#include "spst/lbfgs.hpp"
#include "spst/localized.hpp"
#include "spst/rng.hpp"

namespace spst {

enum class ScheduleMode { baseline, fast };

inline const char* mode_name(ScheduleMode m) { return m == ScheduleMode::fast ? "fast" : "baseline"; }

inline ScheduleMode parse_mode(const std::string& s) {
  if (s == "fast") return ScheduleMode::fast;
  if (s == "baseline") return ScheduleMode::baseline;
  throw ConfigError("unknown schedule mode '" + s + "' (expected baseline or fast)");
}

struct Schedule {
  int n_scales = 1;
  std::vector<int> iters;
  std::vector<int> histories;
  ScheduleMode mode = ScheduleMode::fast;
};

inline Schedule make_schedule(int n_scales, ScheduleMode mode) {
  if (n_scales < 1) throw ConfigError("n_scales must be >= 1");
  Schedule s;
  s.n_scales = n_scales;
  s.mode = mode;
  for (int i = 0; i < n_scales; ++i) {
    if (i == 0) {
      s.iters.push_back(600);
    } else if (mode == ScheduleMode::baseline) {
      s.iters.push_back(300);
    } else {
      s.iters.push_back(std::max(s.iters.back() / 3, 30));
    }
    s.histories.push_back(i == 0 ? 100 : 10);
  }
  return s;
}

struct Dims {
  int height = 0;
  int width = 0;
  friend bool operator==(const Dims&, const Dims&) = default;
};

inline int scale_factor(int n_scales, int scale) { return 1 << (n_scales - scale); }

// Dims of every scale, coarsest first, each a ceil-division of the full dims.
inline std::vector<Dims> scale_dims(int height, int width, int n_scales) {
  if (n_scales < 1) throw ConfigError("n_scales must be >= 1");
  if (n_scales > 30) throw ConfigError("too many scales");
  std::vector<Dims> out;
  for (int s = 1; s <= n_scales; ++s) {
    const int f = scale_factor(n_scales, s);
    out.push_back({ceil_div(height, f), ceil_div(width, f)});
  }
  return out;
}

// Scale count giving a coarsest side of roughly 200 px.
inline int recommended_synth_scales(int height, int width) {
  const double side = std::max(height, width);
  if (side <= 200.0) return 1;
  return 1 + static_cast<int>(std::lround(std::log2(side / 200.0)));
}

template <typename T>
std::map<std::string, int> style_tap_channels(const Network<T>& net) {
  std::map<std::string, int> out;
  for (const auto& t : net.spec().style_taps) out[t.name] = net.geometry(t.name).channels;
  return out;
}

struct RunConfig {
  std::string content_path;
  std::string style_path;
  std::string output_path;
  int n_scales = 1;
  ScheduleMode mode = ScheduleMode::fast;
  std::vector<int> iters;  // replaces the schedule's counts when set
  std::optional<LossWeights> weights;
  GridParams grid;
  std::uint64_t seed = 0;
  std::string dtype = "f32";
  Residency residency = Residency::host;
  LineSearchParams line_search;
  double grad_tol = 0.0;

  std::string checkpoint_dir;
  bool resume = false;
  std::string stats_cache_dir;
  std::string config_hash;

  Schedule schedule() const {
    Schedule s = make_schedule(n_scales, mode);
    if (!iters.empty()) {
      if (static_cast<int>(iters.size()) != n_scales) {
        throw ConfigError("iteration override needs one count per scale");
      }
      for (int v : iters) {
        if (v < 0) throw ConfigError("iteration counts must be non-negative");
      }
      s.iters = iters;
    }
    return s;
  }
};

struct Progress {
  int scale = 0;
  int n_scales = 0;
  IterationInfo iter;
};

using ProgressCallback = std::function<void(const Progress&)>;

struct ScaleReport {
  int scale = 0;
  Dims dims;
  int iterations = 0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::vector<double> trace;
  double seconds = 0.0;
  bool from_checkpoint = false;
};

template <typename T>
struct RunResult {
  Image<T> image;
  std::vector<ScaleReport> scales;
  std::vector<std::string> warnings;
};

namespace checkpoint {

inline std::string stem(const std::string& dir, int scale) {
  return (std::filesystem::path(dir) / ("scale-" + std::to_string(scale))).string();
}

struct Sidecar {
  int scale = 0;
  int n_scales = 0;
  int iteration = 0;
  std::string config_hash;
  Dims dims;
  double loss = 0.0;
};

template <typename T>
void save(const std::string& dir, const Sidecar& meta, const Image<T>& x) {
  std::filesystem::create_directories(dir);
  const std::string base = stem(dir, meta.scale);
  nlohmann::json j = {{"scale", meta.scale},
                      {"n_scales", meta.n_scales},
                      {"iteration", meta.iteration},
                      {"config_hash", meta.config_hash},
                      {"height", meta.dims.height},
                      {"width", meta.dims.width},
                      {"loss", meta.loss}};
  io::write_png(base + ".png", x, 16, {{"spst:config_hash", meta.config_hash}});
  // The PNG is quantized; the raw record keeps resumed runs exact.
  container::Record r;
  r.name = "x";
  r.dtype = container::DType::f64;
  r.dims = {3, static_cast<std::uint32_t>(x.height()), static_cast<std::uint32_t>(x.width())};
  r.values.assign(x.tensor().values().begin(), x.tensor().values().end());
  container::write(base + ".nstw", {r});
  std::ofstream(base + ".json") << j.dump() << '\n';
}

inline std::optional<Sidecar> read_sidecar(const std::string& dir, int scale) {
  std::ifstream in(stem(dir, scale) + ".json");
  if (!in) return std::nullopt;
  nlohmann::json j;
  try {
    in >> j;
    Sidecar s;
    s.scale = j.at("scale");
    s.n_scales = j.at("n_scales");
    s.iteration = j.at("iteration");
    s.config_hash = j.at("config_hash");
    s.dims = {j.at("height"), j.at("width")};
    s.loss = j.at("loss");
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad checkpoint sidecar in " + dir + ": " + e.what());
  }
}

template <typename T>
Image<T> load_x(const std::string& dir, int scale, Dims dims) {
  const auto recs = container::read(stem(dir, scale) + ".nstw");
  const auto* r = container::find(recs, "x");
  if (!r || r->dims != std::vector<std::uint32_t>{3, static_cast<std::uint32_t>(dims.height),
                                                  static_cast<std::uint32_t>(dims.width)}) {
    throw FormatError("checkpoint for scale " + std::to_string(scale) + " has the wrong shape");
  }
  Tensor<T> t({3, dims.height, dims.width});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(r->values[i]);
  return Image<T>(std::move(t));
}

}  // namespace checkpoint

namespace detail {

template <typename T>
StatsMap style_stats_cached(const Image<T>& v_scaled, const Network<T>& net,
                            const RunConfig& cfg, const std::string& style_hash, int scale) {
  if (cfg.stats_cache_dir.empty()) return stats_pass(v_scaled, net, cfg.grid);
  Fnv1a key;
  key.str(style_hash).u64(static_cast<std::uint64_t>(scale)).u64(static_cast<std::uint64_t>(cfg.n_scales));
  key.str(extractor_hash(net.spec())).u64(sizeof(T));
  key.u64(static_cast<std::uint64_t>(cfg.grid.block)).u64(static_cast<std::uint64_t>(cfg.grid.margin));
  const auto path = std::filesystem::path(cfg.stats_cache_dir) / ("stats-" + key.hex() + ".nstw");
  if (std::filesystem::exists(path)) return load_stats(path.string());
  auto stats = stats_pass(v_scaled, net, cfg.grid);
  std::filesystem::create_directories(cfg.stats_cache_dir);
  save_stats(path.string(), stats);
  return stats;
}

template <typename T>
Image<T> downscale(const Image<T>& img, int factor) {
  return factor == 1 ? img : resize_down(img, factor);
}

template <typename T>
Image<T> uniform_noise(Dims d, std::uint64_t seed) {
  Image<T> img(d.height, d.width);
  Rng rng(seed);
  for (auto& v : img.tensor().values()) v = static_cast<T>(rng.uniform());
  return img;
}

// Shared coarse-to-fine loop. Without content the problem is texture
// synthesis, started from noise.
template <typename T>
RunResult<T> run_scales(std::shared_ptr<const Network<T>> net, const Image<T>* content,
                        const Image<T>& style, Dims full, const RunConfig& cfg,
                        const ProgressCallback& progress) {
  const Schedule sched = cfg.schedule();
  const int n = sched.n_scales;
  const auto dims = scale_dims(full.height, full.width, n);
  const int stride = net->deepest().stride;
  const Dims style_coarse{ceil_div(style.height(), scale_factor(n, 1)),
                          ceil_div(style.width(), scale_factor(n, 1))};
  if (std::min(dims[0].height, dims[0].width) < stride ||
      std::min(style_coarse.height, style_coarse.width) < stride) {
    throw ConfigError("scale 1 is smaller than one feature pixel (deepest stride " +
                      std::to_string(stride) + "); use fewer scales");
  }

  RunResult<T> out;
  LossWeights weights = cfg.weights ? *cfg.weights : default_loss_weights(style_tap_channels(*net));
  if (!content && cfg.weights && cfg.weights->lambda_c != 0.0) {
    out.warnings.push_back("texture synthesis ignores lambda_c=" + std::to_string(weights.lambda_c) +
                           "; using 0");
    std::cerr << "warning: " << out.warnings.back() << '\n';
  }
  const std::string style_hash = tensor_hash(style.tensor());

  int first = 1;
  Image<T> x;
  if (cfg.resume && !cfg.checkpoint_dir.empty()) {
    for (int s = n; s >= 1; --s) {
      const auto meta = checkpoint::read_sidecar(cfg.checkpoint_dir, s);
      if (!meta || meta->config_hash != cfg.config_hash || meta->n_scales != n) continue;
      x = checkpoint::load_x<T>(cfg.checkpoint_dir, s, dims[static_cast<std::size_t>(s - 1)]);
      ScaleReport rep;
      rep.scale = s;
      rep.dims = dims[static_cast<std::size_t>(s - 1)];
      rep.iterations = meta->iteration;
      rep.final_loss = meta->loss;
      rep.from_checkpoint = true;
      out.scales.push_back(rep);
      first = s + 1;
      break;
    }
  }

  for (int s = first; s <= n; ++s) {
    const auto t0 = std::chrono::steady_clock::now();
    const Dims d = dims[static_cast<std::size_t>(s - 1)];
    const int factor = scale_factor(n, s);

    if (s == 1) {
      x = content ? downscale(*content, factor) : uniform_noise<T>(d, cfg.seed);
    } else {
      x = resize_up2(x, d.height, d.width);
    }

    const Image<T> v_s = downscale(style, factor);
    StatsMap stats = style_stats_cached(v_s, *net, cfg, style_hash, s);
    TransferProblem<T> problem =
        content ? make_transfer_problem<T>(net, downscale(*content, factor).tensor(),
                                           std::move(stats), weights, cfg.grid)
                : make_texture_problem<T>(net, d.height, d.width, std::move(stats), weights,
                                          cfg.grid);

    LBFGSConfig opt;
    opt.history_size = sched.histories[static_cast<std::size_t>(s - 1)];
    opt.max_iters = sched.iters[static_cast<std::size_t>(s - 1)];
    opt.line_search = cfg.line_search;
    opt.grad_tol = cfg.grad_tol;
    opt.state_residency = cfg.residency;

    auto result = minimize(
        [&](const Tensor<T>& xt) { return loss_grad(xt, problem); }, x.tensor(), opt,
        [&](const IterationInfo& info, const Tensor<T>&) {
          if (progress) progress({s, n, info});
        });
    if (!monotone_non_increasing(result.initial_loss, result.trace)) {
      throw Error("loss increased during scale " + std::to_string(s));
    }

    x = Image<T>(std::move(result.x));
    ScaleReport rep;
    rep.scale = s;
    rep.dims = d;
    rep.iterations = result.iterations;
    rep.initial_loss = result.initial_loss;
    rep.final_loss = result.final_loss();
    rep.trace = std::move(result.trace);
    rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.scales.push_back(std::move(rep));

    if (!cfg.checkpoint_dir.empty()) {
      checkpoint::save(cfg.checkpoint_dir,
                       {s, n, out.scales.back().iterations, cfg.config_hash, d,
                        out.scales.back().final_loss},
                       x);
    }
  }
  out.image = std::move(x);
  return out;
}

}  // namespace detail

// Coarse-to-fine transfer of v's style onto u; returns x at u's resolution.
template <typename T>
RunResult<T> multiscale_transfer(std::shared_ptr<const Network<T>> net, const Image<T>& u,
                                 const Image<T>& v, const RunConfig& cfg,
                                 const ProgressCallback& progress = {}) {
  return detail::run_scales(std::move(net), &u, v, {u.height(), u.width()}, cfg, progress);
}

// Texture synthesis from white noise. Output size defaults to the exemplar's.
template <typename T>
RunResult<T> texture_synthesize(std::shared_ptr<const Network<T>> net, const Image<T>& v,
                                const RunConfig& cfg, const ProgressCallback& progress = {},
                                Dims size = {}) {
  if (size.height == 0) size = {v.height(), v.width()};
  return detail::run_scales<T>(std::move(net), nullptr, v, size, cfg, progress);
}

}  // namespace spst
