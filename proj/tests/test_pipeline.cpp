#include <gtest/gtest.h>

#include <filesystem>

#include "spst/metrics.hpp"
#include "spst/pipeline.hpp"
#include "support/fixtures.hpp"

using namespace spst;
namespace fs = std::filesystem;

namespace {

std::shared_ptr<const Network<double>> tiny64() {
  return std::make_shared<const Network<double>>(tinynet(0));
}

RunConfig small_config(int scales, std::vector<int> iters) {
  RunConfig c;
  c.n_scales = scales;
  c.iters = std::move(iters);
  c.grid.block = 32;
  c.grid.margin = 16;
  c.grid.threads = 1;
  c.seed = 3;
  c.dtype = "f64";
  return c;
}

}  // namespace

TEST(Schedule, PaperSchedules) {
  EXPECT_EQ(make_schedule(4, ScheduleMode::fast).iters, (std::vector<int>{600, 200, 66, 30}));
  EXPECT_EQ(make_schedule(4, ScheduleMode::baseline).iters, (std::vector<int>{600, 300, 300, 300}));
  EXPECT_EQ(make_schedule(5, ScheduleMode::fast).iters, (std::vector<int>{600, 200, 66, 30, 30}));
  EXPECT_EQ(make_schedule(3, ScheduleMode::fast).histories, (std::vector<int>{100, 10, 10}));
  EXPECT_THROW(make_schedule(0, ScheduleMode::fast), ConfigError);
  EXPECT_EQ(parse_mode("baseline"), ScheduleMode::baseline);
  EXPECT_THROW(parse_mode("quick"), ConfigError);
}

TEST(Schedule, InvariantsOverScaleCounts) {
  for (int n = 1; n <= 12; ++n) {
    for (auto mode : {ScheduleMode::fast, ScheduleMode::baseline}) {
      const auto s = make_schedule(n, mode);
      ASSERT_EQ(s.iters.size(), static_cast<std::size_t>(n));
      ASSERT_EQ(s.histories.size(), static_cast<std::size_t>(n));
      for (int i = 1; i < n; ++i) {
        EXPECT_GE(s.iters[static_cast<std::size_t>(i)], 30);
        EXPECT_LE(s.iters[static_cast<std::size_t>(i)], s.iters[static_cast<std::size_t>(i - 1)]);
      }
    }
  }
}

TEST(ScaleDims, PaperChain) {
  const auto d = scale_dims(6048, 8064, 4);
  EXPECT_EQ(d, (std::vector<Dims>{{756, 1008}, {1512, 2016}, {3024, 4032}, {6048, 8064}}));
}

TEST(ScaleDims, RaggedChainHasNoDrift) {
  const auto d = scale_dims(1001, 777, 4);
  EXPECT_EQ(d.front(), (Dims{126, 98}));
  EXPECT_EQ(d.back(), (Dims{1001, 777}));
  for (std::size_t s = 1; s < d.size(); ++s) {
    EXPECT_LE(d[s].height, 2 * d[s - 1].height);
    EXPECT_GE(d[s].height, 2 * d[s - 1].height - 1);
  }
  Image<double> x(d[0].height, d[0].width, 0.5);
  for (std::size_t s = 1; s < d.size(); ++s) {
    x = resize_up2(x, d[s].height, d[s].width);
    EXPECT_EQ((Dims{x.height(), x.width()}), d[s]);
  }
}

TEST(Synthesis, RecommendedScales) {
  EXPECT_EQ(recommended_synth_scales(256, 256), 1);
  EXPECT_EQ(recommended_synth_scales(800, 600), 3);
  const int n = recommended_synth_scales(6048, 8064);
  EXPECT_NEAR(8064.0 / (1 << (n - 1)), 200.0, 100.0);
}

TEST(Multiscale, CoarsestScaleTooSmall) {
  const auto img = fixture::painting<double>(24, 24, 1);
  EXPECT_THROW(multiscale_transfer(tiny64(), img, img, small_config(4, {1, 1, 1, 1})), ConfigError);
}

TEST(Multiscale, IdentityRunFromBlurredStart) {
  // A one-scale identity run starting at u has zero loss; start from a blur.
  const auto net = tiny64();
  const auto u = fixture::painting<double>(128, 128, 5);
  const auto cfg = small_config(1, {50});
  auto p = make_transfer_problem<double>(net, u.tensor(), stats_pass(u, *net, cfg.grid),
                                         default_loss_weights(style_tap_channels(*net)), cfg.grid);
  const auto x0 = resize_up2(resize_down(u, 2), 128, 128);
  LBFGSConfig opt;
  opt.max_iters = 50;
  opt.history_size = 100;
  const auto r = minimize([&](const Tensor<double>& x) { return loss_grad(x, p); }, x0.tensor(), opt);
  EXPECT_GT(r.initial_loss, 0.0);
  EXPECT_LE(r.final_loss(), 0.05 * r.initial_loss);
  EXPECT_TRUE(monotone_non_increasing(r.initial_loss, r.trace));
}

TEST(Multiscale, OneScaleIsPlainSingleScaleTransfer) {
  const auto net = tiny64();
  const auto u = fixture::painting<double>(64, 64, 7);
  const auto v = fixture::painting<double>(64, 64, 8);
  const auto cfg = small_config(1, {6});
  const auto run = multiscale_transfer(net, u, v, cfg);

  auto p = make_transfer_problem<double>(net, u.tensor(), stats_pass(v, *net, cfg.grid),
                                         default_loss_weights(style_tap_channels(*net)), cfg.grid);
  LBFGSConfig opt;
  opt.max_iters = 6;
  opt.history_size = 100;
  opt.state_residency = Residency::host;
  const auto direct = minimize([&](const Tensor<double>& x) { return loss_grad(x, p); }, u.tensor(), opt);
  EXPECT_EQ(run.image.tensor(), direct.x);
  ASSERT_EQ(run.scales.size(), 1u);
  EXPECT_EQ(run.scales[0].trace, direct.trace);
}

TEST(Multiscale, TracesMonotoneAndProgressPerIteration) {
  const auto u = fixture::painting<double>(64, 80, 9);
  const auto v = fixture::painting<double>(72, 64, 10);
  std::vector<Progress> seen;
  const auto run = multiscale_transfer(tiny64(), u, v, small_config(2, {5, 3}),
                                       [&](const Progress& p) { seen.push_back(p); });
  EXPECT_EQ(run.image.height(), 64);
  EXPECT_EQ(run.image.width(), 80);
  ASSERT_EQ(run.scales.size(), 2u);
  EXPECT_EQ(run.scales[0].dims, (Dims{32, 40}));
  int expected = 0;
  for (const auto& s : run.scales) {
    EXPECT_TRUE(monotone_non_increasing(s.initial_loss, s.trace));
    expected += s.iterations;
  }
  ASSERT_EQ(static_cast<int>(seen.size()), expected);
  EXPECT_EQ(seen.front().scale, 1);
  EXPECT_EQ(seen.back().scale, 2);
  EXPECT_EQ(seen.back().iter.loss, run.scales[1].trace.back());
}

TEST(Multiscale, Deterministic) {
  const auto u = fixture::painting<double>(64, 64, 11);
  const auto v = fixture::painting<double>(64, 64, 12);
  auto cfg = small_config(2, {4, 3});
  const auto a = multiscale_transfer(tiny64(), u, v, cfg);
  cfg.grid.threads = 3;
  const auto b = multiscale_transfer(tiny64(), u, v, cfg);
  EXPECT_EQ(a.image, b.image);
}

TEST(Multiscale, ResumeMatchesUninterruptedRun) {
  const auto dir = fixture::temp_dir("spst_resume");
  const auto u = fixture::painting<double>(64, 64, 13);
  const auto v = fixture::painting<double>(64, 64, 14);
  auto cfg = small_config(3, {4, 3, 2});
  cfg.config_hash = "abc";
  cfg.checkpoint_dir = dir.string();
  const auto full = multiscale_transfer(tiny64(), u, v, cfg);
  for (int s = 1; s <= 3; ++s) {
    EXPECT_TRUE(fs::exists(checkpoint::stem(dir.string(), s) + ".png"));
    const auto meta = checkpoint::read_sidecar(dir.string(), s);
    ASSERT_TRUE(meta);
    EXPECT_EQ(meta->config_hash, "abc");
    EXPECT_EQ(meta->scale, s);
  }
  // Simulate an interruption after scale 1.
  for (int s = 2; s <= 3; ++s)
    for (const char* ext : {".png", ".json", ".nstw"}) fs::remove(checkpoint::stem(dir.string(), s) + ext);
  cfg.resume = true;
  const auto resumed = multiscale_transfer(tiny64(), u, v, cfg);
  ASSERT_EQ(resumed.scales.size(), 3u);
  EXPECT_TRUE(resumed.scales[0].from_checkpoint);
  EXPECT_EQ(resumed.image, full.image);

  // A checkpoint from another configuration is ignored.
  cfg.config_hash = "other";
  const auto fresh = multiscale_transfer(tiny64(), u, v, cfg);
  EXPECT_FALSE(fresh.scales[0].from_checkpoint);
  fs::remove_all(dir);
}

TEST(Multiscale, StatsCacheIsTransparent) {
  const auto dir = fixture::temp_dir("spst_cache");
  const auto u = fixture::painting<double>(64, 64, 15);
  const auto v = fixture::painting<double>(64, 64, 16);
  auto cfg = small_config(2, {3, 2});
  const auto plain = multiscale_transfer(tiny64(), u, v, cfg);
  cfg.stats_cache_dir = dir.string();
  const auto first = multiscale_transfer(tiny64(), u, v, cfg);
  EXPECT_EQ(std::distance(fs::directory_iterator(dir), fs::directory_iterator{}), 2);
  const auto second = multiscale_transfer(tiny64(), u, v, cfg);
  EXPECT_EQ(plain.image, first.image);
  EXPECT_EQ(first.image, second.image);
  fs::remove_all(dir);
}

TEST(Multiscale, ScalesStayConsistent) {
  // Downscaling each scale's result should land near the previous scale's.
  const auto u = fixture::painting<double>(128, 128, 17);
  const auto v = fixture::painting<double>(128, 128, 18);
  auto cfg = small_config(3, {15, 10, 8});
  cfg.checkpoint_dir = fixture::temp_dir("spst_stability").string();
  multiscale_transfer(tiny64(), u, v, cfg);
  const auto dims = scale_dims(128, 128, 3);
  for (int s = 2; s <= 3; ++s) {
    const auto hi = checkpoint::load_x<double>(cfg.checkpoint_dir, s, dims[static_cast<std::size_t>(s - 1)]);
    const auto lo = checkpoint::load_x<double>(cfg.checkpoint_dir, s - 1, dims[static_cast<std::size_t>(s - 2)]);
    EXPECT_GE(psnr(resize_down(hi, 2), lo), 18.0) << "scale " << s;
  }
  fs::remove_all(cfg.checkpoint_dir);
}

TEST(Texture, SeedsAndContentWeight) {
  const auto v = fixture::painting<double>(64, 64, 19);
  auto cfg = small_config(2, {4, 3});
  LossWeights w = default_loss_weights(style_tap_channels(*tiny64()));
  w.lambda_c = 5.0;
  cfg.weights = w;
  const auto a = texture_synthesize(tiny64(), v, cfg);
  ASSERT_EQ(a.warnings.size(), 1u);
  const auto b = texture_synthesize(tiny64(), v, cfg);
  EXPECT_EQ(a.image, b.image);
  cfg.seed = 4;
  const auto c = texture_synthesize(tiny64(), v, cfg);
  EXPECT_NE(a.image, c.image);
  const auto sized = texture_synthesize(tiny64(), v, cfg, {}, {48, 40});
  EXPECT_EQ(sized.image.height(), 48);
  EXPECT_EQ(sized.image.width(), 40);
}
