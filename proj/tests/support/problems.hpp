#pragma once

#include <memory>

#include "spst/localized.hpp"
#include "support/fixtures.hpp"

namespace spst::fixture {

template <typename T>
std::map<std::string, int> tap_channels(const Network<T>& net) {
  std::map<std::string, int> out;
  for (const auto& t : net.spec().style_taps) out[t.name] = net.geometry(t.name).channels;
  return out;
}

// Random content/style pair on TinyNet with default weights.
template <typename T>
TransferProblem<T> tiny_problem(int h, int w, std::uint64_t seed, GridParams grid,
                                std::uint64_t net_seed = 0) {
  auto net = std::make_shared<const Network<T>>(tinynet(net_seed));
  const auto u = noise_image<T>(h, w, seed * 3 + 1).tensor();
  const auto v = noise_image<T>(h + 8, w - 4, seed * 3 + 2).tensor();
  auto style = stats_pass(v, *net, grid);
  auto weights = default_loss_weights(tap_channels(*net));
  return make_transfer_problem<T>(net, u, std::move(style), weights, grid);
}

}  // namespace spst::fixture
