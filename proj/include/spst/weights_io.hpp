#pragma once

#include <string>

#include "spst/container.hpp"
#include "spst/extractor.hpp"

namespace spst {

// Name of the record carrying preprocessing constants:
// [range, mean r g b, std r g b, bgr flag].
inline constexpr const char* kPreprocessRecord = "__preprocess__";

inline void save_weights(const std::string& path, const ExtractorSpec& spec,
                         container::DType dtype = container::DType::f32) {
  std::vector<container::Record> recs;
  const Preprocess& p = spec.preprocess;
  recs.push_back({kPreprocessRecord,
                  container::DType::f64,
                  {8},
                  {p.range, p.mean[0], p.mean[1], p.mean[2], p.std[0], p.std[1], p.std[2],
                   p.bgr ? 1.0 : 0.0}});
  for (const auto& l : spec.layers) {
    if (l.kind != LayerKind::conv) continue;
    if (!l.has_weights()) throw ConfigError("layer " + l.name + " has no weights to save");
    container::Record w{l.name + ".weight", dtype, {}, {}};
    for (int d : l.weight.shape()) w.dims.push_back(static_cast<std::uint32_t>(d));
    w.values.assign(l.weight.values().begin(), l.weight.values().end());
    container::Record b{l.name + ".bias", dtype, {static_cast<std::uint32_t>(l.out_ch)}, {}};
    b.values.assign(l.bias.values().begin(), l.bias.values().end());
    recs.push_back(std::move(w));
    recs.push_back(std::move(b));
  }
  container::write(path, recs);
}

// Binds weights from an NSTW1 file onto `spec`, checking every conv shape.
inline ExtractorSpec load_weights(const std::string& path, ExtractorSpec spec) {
  const auto recs = container::read(path);
  if (const auto* pre = container::find(recs, kPreprocessRecord)) {
    if (pre->values.size() != 8) throw FormatError("preprocess record has wrong length");
    const auto& v = pre->values;
    spec.preprocess = Preprocess{v[0], {v[1], v[2], v[3]}, {v[4], v[5], v[6]}, v[7] != 0.0};
  }
  for (auto& l : spec.layers) {
    if (l.kind != LayerKind::conv) continue;
    const auto* w = container::find(recs, l.name + ".weight");
    const auto* b = container::find(recs, l.name + ".bias");
    if (!w || !b) throw FormatError("layer " + l.name + ": missing weight or bias record");
    const std::vector<std::uint32_t> want_w = {
        static_cast<std::uint32_t>(l.out_ch), static_cast<std::uint32_t>(l.in_ch),
        static_cast<std::uint32_t>(l.k), static_cast<std::uint32_t>(l.k)};
    if (w->dims != want_w) throw FormatError("layer " + l.name + ": weight dims mismatch");
    if (b->dims != std::vector<std::uint32_t>{static_cast<std::uint32_t>(l.out_ch)}) {
      throw FormatError("layer " + l.name + ": bias dims mismatch");
    }
    l.weight = Tensor<double>({l.out_ch, l.in_ch, l.k, l.k}, std::span<const double>(w->values));
    l.bias = Tensor<double>({l.out_ch}, std::span<const double>(b->values));
  }
  return spec;
}

}  // namespace spst
