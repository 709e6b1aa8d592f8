#include <gtest/gtest.h>

#include <cmath>

#include "spst/image.hpp"
#include "spst/image_io.hpp"
#include "spst/layers.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace spst;

namespace {

LayerSpec random_conv(int in, int out, int k, int stride, std::uint64_t seed) {
  LayerSpec l = LayerSpec::conv("c", in, out, k, stride);
  l.weight = fixture::random_tensor<double>({out, in, k, k}, seed);
  l.bias = fixture::random_tensor<double>({out}, seed + 1);
  return l;
}

// Central-difference check of <g, layer(x)> along a random direction.
double fd_layer_error(const LayerSpec& l, const Shape& in_shape, std::uint64_t seed) {
  const auto x = fixture::random_tensor<double>(in_shape, seed);
  const auto out_shape = layer_output_shape(in_shape, l);
  const auto g = fixture::random_tensor<double>(out_shape, seed + 10);
  const auto d = fixture::random_tensor<double>(in_shape, seed + 20);
  const auto gin = layer_backward_input(g, x, l);
  const double analytic = dot(gin, d);
  auto f = [&](double t) {
    Tensor<double> xt(x);
    for (std::size_t i = 0; i < xt.size(); ++i) xt[i] += t * d[i];
    return dot(g, layer_forward(xt, l));
  };
  const double h = 1e-5;
  const double numeric = (f(h) - f(-h)) / (2 * h);
  return oracle::rel_diff(analytic, numeric);
}

}  // namespace

TEST(LayerForward, ReluDefinition) {
  Tensor<double> x({1, 2, 2}, {-1, 2, 0, -3});
  const auto y = layer_forward(x, LayerSpec::relu("r"));
  EXPECT_EQ(y, (Tensor<double>({1, 2, 2}, {0, 2, 0, 0})));
}

TEST(LayerForward, IdentityOneByOneConv) {
  LayerSpec l = LayerSpec::conv("id", 3, 3, 1);
  l.weight = Tensor<double>({3, 3, 1, 1});
  for (int c = 0; c < 3; ++c) l.weight[static_cast<std::size_t>(c * 3 + c)] = 1.0;
  l.bias = Tensor<double>({3});
  const auto x = fixture::random_tensor<double>({3, 5, 7}, 3);
  EXPECT_EQ(layer_forward(x, l), x);
}

TEST(LayerForward, ConvMatchesNestedLoopOracle) {
  for (int stride : {1, 2}) {
    const LayerSpec l = random_conv(4, 5, 3, stride, 42);
    const auto x = fixture::random_tensor<double>({4, 8, 8}, 7);
    int oh = 0, ow = 0;
    const auto ref = oracle::naive_conv({x.values().begin(), x.values().end()}, 4, 8, 8,
                                        {l.weight.values().begin(), l.weight.values().end()},
                                        {l.bias.values().begin(), l.bias.values().end()}, 5, 3,
                                        stride, 1, oh, ow);
    const auto y = layer_forward(x, l);
    ASSERT_EQ(y.shape(), (Shape{5, oh, ow}));
    for (std::size_t i = 0; i < y.size(); ++i) {
      EXPECT_NEAR(y[i], ref[i], 1e-6 * std::max(1.0, std::abs(ref[i])));
    }
  }
}

TEST(LayerForward, ConvF32MatchesOracle) {
  const LayerSpec l = random_conv(3, 4, 5, 1, 11);
  const auto x = fixture::random_tensor<float>({3, 9, 6}, 12);
  int oh = 0, ow = 0;
  const auto xd = x.cast<double>();
  const auto ref = oracle::naive_conv({xd.values().begin(), xd.values().end()}, 3, 9, 6,
                                      {l.weight.values().begin(), l.weight.values().end()},
                                      {l.bias.values().begin(), l.bias.values().end()}, 4, 5, 1, 2,
                                      oh, ow);
  const auto y = layer_forward(x, l);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-5);
}

TEST(LayerForward, ChannelMismatchIsShapeError) {
  const LayerSpec l = random_conv(4, 2, 3, 1, 1);
  EXPECT_THROW(layer_forward(Tensor<double>({3, 4, 4}), l), ShapeError);
}

TEST(LayerForward, PoolOutputUsesFloor) {
  const auto y = layer_forward(Tensor<double>({2, 5, 7}, 1.0), LayerSpec::pool_layer("p", PoolKind::avg, 2));
  EXPECT_EQ(y.shape(), (Shape{2, 2, 3}));
}

TEST(LayerBackward, ReluDeadUnits) {
  const auto x = fixture::random_tensor<double>({2, 3, 3}, 5, -2.0, -0.1);
  const auto g = fixture::random_tensor<double>({2, 3, 3}, 6);
  const auto gin = layer_backward_input(g, x, LayerSpec::relu("r"));
  for (double v : gin.values()) EXPECT_EQ(v, 0.0);
}

TEST(LayerBackward, AvgPoolUniformSplit) {
  const auto gin = layer_backward_input(Tensor<double>({1, 1, 1}, {4.0}), Tensor<double>({1, 2, 2}),
                                        LayerSpec::pool_layer("p", PoolKind::avg, 2));
  EXPECT_EQ(gin, (Tensor<double>({1, 2, 2}, {1, 1, 1, 1})));
}

TEST(LayerBackward, MaxPoolRoutesToFirstMaximum) {
  Tensor<double> x({1, 2, 2}, {3, 5, 5, 1});
  const auto gin = layer_backward_input(Tensor<double>({1, 1, 1}, {2.0}), x,
                                        LayerSpec::pool_layer("p", PoolKind::max, 2));
  EXPECT_EQ(gin, (Tensor<double>({1, 2, 2}, {0, 2, 0, 0})));
}

TEST(LayerBackward, ConvMatchesFiniteDifferences) {
  EXPECT_LE(fd_layer_error(random_conv(2, 3, 3, 1, 9), {2, 6, 6}, 100), 1e-6);
  EXPECT_LE(fd_layer_error(random_conv(2, 3, 3, 2, 9), {2, 7, 6}, 101), 1e-6);
  EXPECT_LE(fd_layer_error(random_conv(3, 2, 5, 1, 19), {3, 6, 6}, 102), 1e-6);
}

TEST(LayerBackward, EveryLayerKindMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    EXPECT_LE(fd_layer_error(LayerSpec::relu("r"), {3, 5, 5}, 200 + seed), 1e-6);
    EXPECT_LE(fd_layer_error(LayerSpec::pool_layer("a", PoolKind::avg, 2), {3, 6, 5}, 300 + seed), 1e-6);
    EXPECT_LE(fd_layer_error(LayerSpec::pool_layer("m", PoolKind::max, 2), {3, 6, 6}, 400 + seed), 1e-6);
    EXPECT_LE(fd_layer_error(random_conv(3, 4, 3, 1, seed), {3, 6, 6}, 500 + seed), 1e-6);
  }
}

TEST(LayerBackward, GradShapeMismatchIsShapeError) {
  const LayerSpec l = random_conv(2, 3, 3, 1, 1);
  EXPECT_THROW(layer_backward_input(Tensor<double>({3, 5, 5}), Tensor<double>({2, 4, 4}), l),
               ShapeError);
}

TEST(Resize, DownscalePaperDims) {
  // Sizes only: a 6048x8064 image downscaled by 8.
  Image<float> img(6048 / 8 * 8, 8064);
  const auto out = resize_down(img, 8);
  EXPECT_EQ(out.height(), 756);
  EXPECT_EQ(out.width(), 1008);
}

TEST(Resize, DownscaleIdentityAndConstant) {
  const auto img = fixture::noise_image<double>(9, 7, 1);
  EXPECT_EQ(resize_down(img, 1), img);
  const auto half = resize_down(Image<double>(12, 10, 0.5), 4);
  EXPECT_EQ(half.height(), 3);
  EXPECT_EQ(half.width(), 3);
  for (double v : half.tensor().values()) EXPECT_EQ(v, 0.5);
}

TEST(Resize, DownscaleCeilDimsAndPartialBoxes) {
  Image<double> img(3, 3);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 3; ++x) img.at(0, y, x) = y * 3 + x;
  const auto out = resize_down(img, 2);
  ASSERT_EQ(out.height(), 2);
  EXPECT_DOUBLE_EQ(out.at(0, 0, 0), (0 + 1 + 3 + 4) / 4.0);
  EXPECT_DOUBLE_EQ(out.at(0, 0, 1), (2 + 5) / 2.0);
  EXPECT_DOUBLE_EQ(out.at(0, 1, 1), 8.0);
}

TEST(Resize, DownscaleComposesWhenFactorsDivide) {
  // Dyadic values make every partial sum exact, so equality is bitwise.
  Rng rng(17);
  Image<double> img(24, 16);
  for (auto& v : img.tensor().values()) v = std::floor(rng.uniform() * 256) / 256.0;
  EXPECT_EQ(resize_down(img, 8), resize_down(resize_down(img, 2), 4));
  EXPECT_EQ(resize_down(img, 4), resize_down(resize_down(img, 2), 2));
  // Arbitrary values agree to rounding.
  const auto noise = fixture::noise_image<double>(24, 16, 3);
  const auto a = resize_down(noise, 8), b = resize_down(resize_down(noise, 4), 2);
  for (std::size_t i = 0; i < a.tensor().size(); ++i) {
    EXPECT_NEAR(a.tensor()[i], b.tensor()[i], 1e-15);
  }
}

TEST(Resize, UpscaleConstantsAndSinglePixel) {
  const auto up = resize_up2(Image<double>(3, 5, 0.25));
  EXPECT_EQ(up.height(), 6);
  EXPECT_EQ(up.width(), 10);
  for (double v : up.tensor().values()) EXPECT_DOUBLE_EQ(v, 0.25);
  Image<double> one(1, 1);
  one.at(0, 0, 0) = 0.3;
  one.at(1, 0, 0) = 0.6;
  one.at(2, 0, 0) = 0.9;
  const auto two = resize_up2(one);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x) EXPECT_DOUBLE_EQ(two.at(1, y, x), 0.6);
}

TEST(Resize, UpscaleToExplicitTarget) {
  const auto up = resize_up2(fixture::noise_image<double>(5, 4, 2), 9, 7);
  EXPECT_EQ(up.height(), 9);
  EXPECT_EQ(up.width(), 7);
}

TEST(Resize, UpDownRoundTripOnSmoothImages) {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const auto img = fixture::smooth_image<double>(16, 16, seed);
    const auto back = resize_down(resize_up2(img), 2);
    double mae = 0.0;
    for (std::size_t i = 0; i < img.tensor().size(); ++i) {
      mae += std::abs(back.tensor()[i] - img.tensor()[i]);
    }
    mae /= static_cast<double>(img.tensor().size());
    EXPECT_LE(mae, 0.02) << "seed " << seed;
  }
}

TEST(Resize, PadReplicateAdjoint) {
  const auto x = fixture::random_tensor<double>({3, 5, 6}, 1);
  const auto g = fixture::random_tensor<double>({3, 8, 8}, 2);
  // <pad(x), g> == <x, pad^T(g)>
  const double lhs = dot(pad_replicate(x, 8, 8), g);
  const double rhs = dot(x, pad_replicate_adjoint(g, 5, 6));
  EXPECT_NEAR(lhs, rhs, 1e-12);
}

TEST(ImageIo, PngRoundTrip8And16Bit) {
  const auto dir = fixture::temp_dir("io");
  Image<float> img(4, 5);
  Rng rng(3);
  for (auto& v : img.tensor().values()) v = static_cast<float>(std::round(rng.uniform() * 255) / 255);
  io::write_png((dir / "a.png").string(), img, 8, {{"spst-config", "block = 64"}});
  io::TextChunks text;
  const auto back = io::read_image((dir / "a.png").string(), &text);
  EXPECT_EQ(back, img);
  EXPECT_EQ(text.at("spst-config"), "block = 64");

  Image<double> fine(3, 3, 0.123456);
  io::write_png((dir / "b.png").string(), fine, 16);
  const auto back16 = io::read_image((dir / "b.png").string());
  EXPECT_NEAR(back16.at(0, 1, 1), 0.123456, 1.0 / 65535);
}

TEST(ImageIo, EncodeClampsToUnitRange) {
  const auto dir = fixture::temp_dir("clamp");
  Image<float> img(2, 2, 1.7f);
  img.at(0, 0, 0) = -0.4f;
  io::write_png((dir / "c.png").string(), img);
  const auto back = io::read_image((dir / "c.png").string());
  EXPECT_EQ(back.at(0, 0, 0), 0.0f);
  EXPECT_EQ(back.at(1, 1, 1), 1.0f);
}

TEST(ImageIo, JpegDecodes) {
  const auto dir = fixture::temp_dir("jpeg");
  io::write_jpeg((dir / "a.jpg").string(), Image<float>(8, 8, 0.5f), 95);
  const auto back = io::read_image((dir / "a.jpg").string());
  EXPECT_EQ(back.height(), 8);
  EXPECT_NEAR(back.at(2, 3, 3), 0.5, 2.0 / 255);
}

TEST(ImageIo, MissingAndGarbageFiles) {
  const auto dir = fixture::temp_dir("garbage");
  EXPECT_THROW(io::read_image((dir / "nope.png").string()), IoError);
  {
    std::ofstream((dir / "junk.png").string()) << "not an image at all";
  }
  EXPECT_THROW(io::read_image((dir / "junk.png").string()), FormatError);
}
