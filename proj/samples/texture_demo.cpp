// Texture synthesis with the built-in TinyNet extractor.
//
//   texture_demo exemplar.png out.png [iterations] [seed]

#include <cstdio>
#include <cstdlib>
#include <memory>

#include "spst/pipeline.hpp"

int main(int argc, char** argv) {
  if (argc < 3) {
    std::fprintf(stderr, "usage: %s exemplar.png out.png [iterations] [seed]\n", argv[0]);
    return 2;
  }
  const int iters = argc > 3 ? std::atoi(argv[3]) : 300;
  try {
    const auto v = spst::io::read_image(argv[1]);
    auto net = std::make_shared<const spst::Network<float>>(spst::tinynet(0));

    spst::RunConfig cfg;
    cfg.n_scales = spst::recommended_synth_scales(v.height(), v.width());
    cfg.iters.assign(static_cast<std::size_t>(cfg.n_scales), iters);
    cfg.grid.block = 256;
    cfg.grid.margin = 32;
    cfg.seed = argc > 4 ? std::strtoull(argv[4], nullptr, 10) : 0;

    const auto res = spst::texture_synthesize(net, v, cfg, [](const spst::Progress& p) {
      if (p.iter.iter % 50 == 0) {
        std::printf("scale %d/%d  iter %4d  loss %.4e\n", p.scale, p.n_scales, p.iter.iter, p.iter.loss);
      }
    });
    spst::io::write_png(argv[2], res.image);
    std::printf("wrote %s (%dx%d)\n", argv[2], res.image.width(), res.image.height());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
