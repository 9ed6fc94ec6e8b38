#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "qdm/fixedpoint.hpp"
#include "qdm/model.hpp"
#include "qdm/tensor.hpp"

namespace qdm {

struct LayerRange {
  std::string layer_id;
  double min_v = 0, max_v = 0;
  std::uint64_t count = 0;  // values observed
};

// Per-layer activation extremes over a calibration set, sorted by layer_id
// (layer names carry a zero-padded index, so lexical order is topological).
struct ActivationProfile {
  std::vector<LayerRange> layers;
};

// Runs every calibration image through the float path, recording each layer
// output's running min/max. Requires a float-storage model and >= 1 image.
ActivationProfile profile_activations(const ModelGraph& g,
                                      const std::vector<Tensor>& images);

// Elementwise min/min, max/max, count sum; associative and commutative, so
// calibration may be split across runs in any order.
ActivationProfile merge(const ActivationProfile& a, const ActivationProfile& b);

// One record per line: "layer_id min max count".
void save_profile(const ActivationProfile& p, const std::string& path);
ActivationProfile load_profile(const std::string& path);

struct QuantPlan {
  QFormat weight_fmt;
  QFormat activation_fmt;
};

// Weight extremes across every blob, widened to float.
std::pair<double, double> weight_range(const ModelGraph& g);

// Integer bits from observed ranges: m = bits_for_range over the global
// profile extremes (activations) and over weight_range (weights);
// n = word_bits - 1 - m in each. Throws when a range needs m >= word_bits.
QuantPlan plan_quantization(const ActivationProfile& p,
                            std::pair<double, double> weight_range,
                            int word_bits);

// Fixed fractional width: m = word_bits - 1 - n for weights and activations.
// Throws, naming the first offending layer, when any profiled range or the
// weight range falls outside the format.
QuantPlan plan_forced_fractional(const ActivationProfile& p,
                                 std::pair<double, double> weight_range,
                                 int word_bits, int n);

// Saturating-quantizes every blob to plan.weight_fmt and marks the graph for
// fixed-point execution at plan.activation_fmt. Graph structure, parameter
// counts, and layer wiring stay identical. Throws if already quantized.
ModelGraph quantize_model(const ModelGraph& g, const QuantPlan& plan);

}  // namespace qdm
