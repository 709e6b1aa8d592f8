#pragma once

#include <cmath>
#include <filesystem>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "spst/hash.hpp"
#include "spst/image_io.hpp"
#include "spst/metrics.hpp"
#include "spst/pipeline.hpp"
#include "spst/weights_io.hpp"

namespace spst::cli {

enum Exit : int { ok = 0, failure = 1, usage = 2, numeric = 3, format = 4 };

struct NetOptions {
  std::string net = "tiny";
  std::string weights_file;
  std::uint64_t net_seed = 0;
  std::string pool = "avg";
};

struct GridOptions {
  int block = 512;
  int margin = 256;
};

struct RunOptions {
  int scales = 1;
  std::string mode = "fast";
  std::vector<int> iters;
  std::uint64_t seed = 0;
  double lambda_c = 1.0;
  bool lambda_c_given = false;
  std::string residency = "host";
  std::string checkpoint;
  std::string resume;
  std::string stats_cache;
  int log_every = 10;
};

struct Options {
  int threads = 0;
  bool deterministic = false;
  std::string dtype = "f32";
  NetOptions net;
  GridOptions grid;
  RunOptions run;

  std::string content, style, output, report, csv, style_id, image;
  std::vector<int> size;
  double tol = -1.0;
  int bit_depth = 8;
};

inline std::string config_hash(const nlohmann::json& effective) { return Fnv1a().str(effective.dump()).hex(); }

template <typename T>
std::shared_ptr<const Network<T>> make_network(const NetOptions& o) {
  ExtractorSpec spec;
  if (o.net == "tiny") {
    spec = tinynet(o.net_seed);
    if (!o.weights_file.empty()) spec = load_weights(o.weights_file, spec);
  } else {
    if (o.weights_file.empty()) throw ConfigError("--net vgg19 needs --weights-file");
    if (!std::filesystem::exists(o.weights_file)) throw IoError("cannot open weights " + o.weights_file);
    spec = load_weights(o.weights_file, vgg19_spec(o.pool == "max" ? PoolKind::max : PoolKind::avg));
  }
  return std::make_shared<const Network<T>>(std::move(spec));
}

template <typename T>
Image<T> load_input(const std::string& path, const char* role) {
  if (!std::filesystem::is_regular_file(path)) throw IoError(std::string("cannot open ") + role + " " + path);
  return io::read_image(path).template cast<T>();
}

inline GridParams grid_params(const Options& o) {
  GridParams g;
  g.block = o.grid.block;
  g.margin = o.grid.margin;
  g.threads = o.threads;
  return g;
}

// Every setting that changes the numbers, plus input fingerprints. Paths,
// threads and logging are left out so equal work hashes equally.
inline nlohmann::json effective_config(const std::string& command, const Options& o) {
  nlohmann::json j = {{"command", command},
                      {"dtype", o.dtype},
                      {"deterministic", o.deterministic},
                      {"net", o.net.net},
                      {"net_seed", o.net.net_seed},
                      {"pool", o.net.pool},
                      {"block", o.grid.block},
                      {"margin", o.grid.margin}};
  if (!o.net.weights_file.empty()) {
    std::ifstream in(o.net.weights_file, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    j["weights_hash"] = Fnv1a().str(bytes).hex();
  }
  if (command != "gradcheck" && command != "stats") {
    j["scales"] = o.run.scales;
    j["mode"] = o.run.mode;
    j["iters"] = o.run.iters;
    j["seed"] = o.run.seed;
    j["lambda_c"] = o.run.lambda_c;
    j["residency"] = o.run.residency;
  }
  return j;
}

template <typename T>
RunConfig run_config(const Options& o, std::shared_ptr<const Network<T>> net) {
  RunConfig rc;
  rc.content_path = o.content;
  rc.style_path = o.style;
  rc.output_path = o.output;
  rc.n_scales = o.run.scales;
  rc.mode = parse_mode(o.run.mode);
  rc.iters = o.run.iters;
  rc.grid = grid_params(o);
  rc.seed = o.run.seed;
  rc.dtype = o.dtype;
  rc.residency = o.run.residency == "device" ? Residency::device : Residency::host;
  auto w = default_loss_weights(style_tap_channels(*net));
  w.lambda_c = o.run.lambda_c;
  rc.weights = w;
  rc.checkpoint_dir = o.run.resume.empty() ? o.run.checkpoint : o.run.resume;
  rc.resume = !o.run.resume.empty();
  rc.stats_cache_dir = o.run.stats_cache;
  return rc;
}

inline ProgressCallback progress_logger(std::ostream& err, int every, int total_scales) {
  return [&err, every, total_scales](const Progress& p) {
    if (every <= 0 || p.iter.iter % every != 0) return;
    err << "scale " << p.scale << '/' << total_scales << " iter " << p.iter.iter << " loss "
        << p.iter.loss << " grad_norm " << p.iter.grad_norm << '\n';
  };
}

inline nlohmann::json scales_json(const std::vector<ScaleReport>& scales) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& s : scales) {
    arr.push_back({{"scale", s.scale},
                   {"height", s.dims.height},
                   {"width", s.dims.width},
                   {"iterations", s.iterations},
                   {"initial_loss", s.initial_loss},
                   {"final_loss", s.final_loss},
                   {"from_checkpoint", s.from_checkpoint}});
  }
  return arr;
}

template <typename T>
void write_output(const std::string& path, const Image<T>& img, const nlohmann::json& effective,
                  const std::string& hash, int bit_depth) {
  const auto ext = std::filesystem::path(path).extension().string();
  if (ext == ".jpg" || ext == ".jpeg" || ext == ".JPG" || ext == ".JPEG") {
    io::write_jpeg(path, img);
  } else {
    io::write_png(path, img, bit_depth, {{"spst:config", effective.dump()}, {"spst:config_hash", hash}});
  }
}

template <typename T>
int do_transfer(const Options& o, const nlohmann::json& eff, std::ostream& out, std::ostream& err) {
  auto net = make_network<T>(o.net);
  const auto u = load_input<T>(o.content, "content");
  const auto v = load_input<T>(o.style, "style");
  nlohmann::json e = eff;
  e["content_hash"] = tensor_hash(u.tensor());
  e["style_hash"] = tensor_hash(v.tensor());
  const std::string hash = config_hash(e);
  err << "config " << e.dump() << "\nconfig_hash " << hash << '\n';
  RunConfig rc = run_config<T>(o, net);
  rc.config_hash = hash;
  const auto res = multiscale_transfer(net, u, v, rc, progress_logger(err, o.run.log_every, rc.n_scales));
  write_output(o.output, res.image, e, hash, o.bit_depth);
  out << nlohmann::json{{"output", o.output}, {"config_hash", hash}, {"scales", scales_json(res.scales)}}.dump()
      << '\n';
  return ok;
}

template <typename T>
int do_synth(const Options& o, const nlohmann::json& eff, std::ostream& out, std::ostream& err) {
  auto net = make_network<T>(o.net);
  const auto v = load_input<T>(o.style, "style");
  Options oo = o;
  Dims size{v.height(), v.width()};
  if (o.size.size() == 2) size = {o.size[0], o.size[1]};
  if (oo.run.scales <= 0) oo.run.scales = recommended_synth_scales(size.height, size.width);
  nlohmann::json e = eff;
  e["scales"] = oo.run.scales;
  e["style_hash"] = tensor_hash(v.tensor());
  e["size"] = {size.height, size.width};
  if (!o.run.lambda_c_given) e["lambda_c"] = 0.0;
  const std::string hash = config_hash(e);
  err << "config " << e.dump() << "\nconfig_hash " << hash << '\n';
  RunConfig rc = run_config<T>(oo, net);
  rc.config_hash = hash;
  // No content term; an explicit --lambda-c is overridden with a warning.
  if (!o.run.lambda_c_given) rc.weights->lambda_c = 0.0;
  const auto res = texture_synthesize(net, v, rc, progress_logger(err, o.run.log_every, rc.n_scales), size);
  write_output(o.output, res.image, e, hash, o.bit_depth);
  out << nlohmann::json{{"output", o.output}, {"config_hash", hash}, {"scales", scales_json(res.scales)}}.dump()
      << '\n';
  return ok;
}

template <typename T>
int do_identity(const Options& o, const nlohmann::json& eff, std::ostream& out, std::ostream& err) {
  auto net = make_network<T>(o.net);
  const auto v = load_input<T>(o.style, "style");
  nlohmann::json e = eff;
  e["style_hash"] = tensor_hash(v.tensor());
  const std::string hash = config_hash(e);
  err << "config " << e.dump() << "\nconfig_hash " << hash << '\n';
  RunConfig rc = run_config<T>(o, net);
  rc.config_hash = hash;
  const std::string id = o.style_id.empty() ? std::filesystem::path(o.style).stem().string() : o.style_id;
  const auto run = identity_test(net, v, rc, id, progress_logger(err, o.run.log_every, rc.n_scales));
  const std::string line = run.report.json_line();
  std::ofstream rep(o.report);
  if (!rep) throw IoError("cannot open report " + o.report);
  rep << line << '\n';
  if (!o.csv.empty()) run.report.append_csv(o.csv);
  if (!o.image.empty()) write_output(o.image, run.image, e, hash, o.bit_depth);
  out << line << '\n';
  return ok;
}

template <typename T>
int do_gradcheck(const Options& o, const nlohmann::json& eff, std::ostream& out, std::ostream& err) {
  auto net = make_network<T>(o.net);
  const int h = o.size.size() == 2 ? o.size[0] : 160;
  const int w = o.size.size() == 2 ? o.size[1] : 160;
  const GridParams g = grid_params(o);
  auto noise = [&](int hh, int ww, std::uint64_t s) {
    Image<T> img(hh, ww);
    Rng rng(s);
    for (auto& x : img.tensor().values()) x = static_cast<T>(rng.uniform());
    return img;
  };
  const auto u = noise(h, w, o.run.seed * 3 + 1);
  const auto v = noise(h, w, o.run.seed * 3 + 2);
  const auto x = noise(h, w, o.run.seed * 3 + 3);
  auto p = make_transfer_problem<T>(net, u.tensor(), stats_pass(v, *net, g),
                                    default_loss_weights(style_tap_channels(*net)), g);
  const auto local = loss_grad(x, p);
  const auto global = loss_grad_global(x, p);
  const double rel = relative_l2_error(local.grad, global.grad);
  const double tol = o.tol >= 0 ? o.tol : (o.dtype == "f64" ? 1e-10 : 1e-5);
  err << "config " << eff.dump() << "\nconfig_hash " << config_hash(eff) << '\n';
  out << nlohmann::json{{"relative_error", rel},
                        {"tol", tol},
                        {"loss_local", local.loss},
                        {"loss_global", global.loss},
                        {"rf_radius", net->deepest().rf_radius},
                        {"margin", g.margin}}
             .dump()
      << '\n';
  if (!(rel <= tol)) {
    err << "error: gradient relative error " << rel << " exceeds tol " << tol << '\n';
    return numeric;
  }
  return ok;
}

template <typename T>
int do_stats(const Options& o, const nlohmann::json& eff, std::ostream& out, std::ostream& err) {
  auto net = make_network<T>(o.net);
  const auto img = load_input<T>(o.content, "image");
  err << "config " << eff.dump() << "\nconfig_hash " << config_hash(eff) << '\n';
  const auto stats = stats_pass(img, *net, grid_params(o));
  if (!o.output.empty()) save_stats(o.output, stats);
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [tap, s] : stats) {
    j[tap] = {{"channels", s.channels}, {"n_p", s.n_p}, {"mean", s.mean}, {"std", s.std}, {"gram", s.gram}};
  }
  out << j.dump() << '\n';
  return ok;
}

template <typename Fn>
int dispatch(const Options& o, Fn&& fn) {
  return o.dtype == "f64" ? fn(double{}) : fn(float{});
}

inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  Options o;
  CLI::App app{"Out-of-core style transfer and texture synthesis", "spst"};
  app.set_config("--config", "", "TOML config file; command-line flags take precedence");
  app.add_option("--threads", o.threads, "block workers (0 = all cores)")->check(CLI::NonNegativeNumber);
  app.add_flag("--deterministic", o.deterministic, "ordered block merges (always on; recorded in the config)");
  app.require_subcommand(1);
  app.fallthrough();

  auto add_net = [&](CLI::App* c) {
    c->add_option("--net", o.net.net, "extractor")->check(CLI::IsMember({"tiny", "vgg19"}));
    c->add_option("--weights-file", o.net.weights_file, "NSTW1 extractor weights");
    c->add_option("--net-seed", o.net.net_seed, "TinyNet weight seed");
    c->add_option("--pool", o.net.pool, "VGG19 pooling")->check(CLI::IsMember({"avg", "max"}));
    c->add_option("--dtype", o.dtype, "compute precision")->check(CLI::IsMember({"f32", "f64"}));
  };
  auto add_grid = [&](CLI::App* c) {
    c->add_option("--block", o.grid.block, "inner block size")->check(CLI::PositiveNumber);
    c->add_option("--margin", o.grid.margin, "block margin")->check(CLI::NonNegativeNumber);
  };
  auto add_run = [&](CLI::App* c) {
    c->add_option("--scales", o.run.scales, "number of scales (synth: 0 picks a ~200 px coarsest scale)")->check(CLI::NonNegativeNumber);
    c->add_option("--mode", o.run.mode, "iteration schedule")->check(CLI::IsMember({"fast", "baseline"}));
    c->add_option("--iters", o.run.iters, "per-scale iteration counts overriding the schedule");
    c->add_option("--seed", o.run.seed, "random seed");
    c->add_option("--lambda-c", o.run.lambda_c, "content weight (per content feature)")
        ->each([&](const std::string&) { o.run.lambda_c_given = true; });
    c->add_option("--residency", o.run.residency, "optimizer state location")
        ->check(CLI::IsMember({"host", "device"}));
    c->add_option("--checkpoint", o.run.checkpoint, "write per-scale checkpoints to this directory");
    c->add_option("--resume", o.run.resume, "resume from the checkpoint directory");
    c->add_option("--stats-cache", o.run.stats_cache, "style statistics cache directory");
    c->add_option("--log-every", o.run.log_every, "progress line every N iterations (0 = off)");
    c->add_option("--bit-depth", o.bit_depth, "PNG bit depth")->check(CLI::IsMember({8, 16}));
  };

  auto* transfer = app.add_subcommand("transfer", "multiscale style transfer");
  transfer->add_option("content", o.content, "content image")->required();
  transfer->add_option("style", o.style, "style image")->required();
  transfer->add_option("output", o.output, "output image")->required();
  add_net(transfer);
  add_grid(transfer);
  add_run(transfer);

  auto* synth = app.add_subcommand("synth", "texture synthesis from white noise");
  synth->add_option("style", o.style, "exemplar image")->required();
  synth->add_option("output", o.output, "output image")->required();
  synth->add_option("--size", o.size, "output height and width")->expected(2);
  add_net(synth);
  add_grid(synth);
  add_run(synth);

  auto* identity = app.add_subcommand("identity", "reproduce a painting from itself and report metrics");
  identity->add_option("style", o.style, "painting")->required();
  identity->add_option("report", o.report, "JSON report path")->required();
  identity->add_option("--csv", o.csv, "append a CSV row");
  identity->add_option("--style-id", o.style_id, "identifier in the report");
  identity->add_option("--image", o.image, "also write the reproduced image");
  add_net(identity);
  add_grid(identity);
  add_run(identity);

  auto* gradcheck = app.add_subcommand("gradcheck", "blockwise vs whole-image gradient");
  gradcheck->add_option("--size", o.size, "height and width")->expected(2);
  gradcheck->add_option("--tol", o.tol, "relative error bound (default 1e-10 f64, 1e-5 f32)");
  gradcheck->add_option("--seed", o.run.seed, "fixture seed");
  add_net(gradcheck);
  add_grid(gradcheck);

  auto* stats = app.add_subcommand("stats", "per-tap feature statistics of an image");
  stats->add_option("image", o.content, "image")->required();
  stats->add_option("--out", o.output, "also save as an NSTW1 file");
  add_net(stats);
  add_grid(stats);

  int sched_scales = 4;
  std::string sched_mode = "fast";
  auto* schedule = app.add_subcommand("schedule", "print per-scale iterations and history sizes");
  schedule->add_option("--scales", sched_scales, "number of scales")->check(CLI::PositiveNumber);
  schedule->add_option("--mode", sched_mode, "schedule")->check(CLI::IsMember({"fast", "baseline"}));

  synth->preparse_callback([&](std::size_t) { o.run.scales = 0; });
  // Blockwise runs default to the tiny-net test geometry.
  gradcheck->preparse_callback([&](std::size_t) {
    o.grid = {64, 16};
  });

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return ok;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return ok;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return usage;
  }

  try {
    if (schedule->parsed()) {
      const auto s = make_schedule(sched_scales, parse_mode(sched_mode));
      for (std::size_t i = 0; i < s.iters.size(); ++i) out << (i ? " " : "") << s.iters[i];
      out << '\n';
      for (std::size_t i = 0; i < s.histories.size(); ++i) out << (i ? " " : "") << s.histories[i];
      out << '\n';
      return ok;
    }
    const std::string cmd = app.get_subcommands().front()->get_name();
    const auto eff = effective_config(cmd, o);
    return dispatch(o, [&](auto tag) {
      using T = decltype(tag);
      if (cmd == "transfer") return do_transfer<T>(o, eff, out, err);
      if (cmd == "synth") return do_synth<T>(o, eff, out, err);
      if (cmd == "identity") return do_identity<T>(o, eff, out, err);
      if (cmd == "gradcheck") return do_gradcheck<T>(o, eff, out, err);
      return do_stats<T>(o, eff, out, err);
    });
  } catch (const NonFiniteError& e) {
    err << "error: " << e.what() << '\n';
    return numeric;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << '\n';
    return format;
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return usage;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return usage;
  } catch (const GeometryError& e) {
    err << "error: " << e.what() << '\n';
    return usage;
  } catch (const ShapeError& e) {
    err << "error: " << e.what() << '\n';
    return usage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return failure;
  }
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  return run(std::vector<std::string>(argv + 1, argv + argc), out, err);
}

}  // namespace spst::cli
