#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qdm/detection.hpp"
#include "qdm/fixedpoint.hpp"
#include "qdm/tensor.hpp"

namespace qdm {

enum class OutStrategy { A, B, C };

enum class LayerKind { conv, depthwise, add, upsample2x, concat, head };

struct StorageFormat {
  enum class Kind { fp32, fp16, qformat };
  Kind kind = Kind::fp32;
  QFormat weight_fmt{};      // used when kind == qformat
  QFormat activation_fmt{};  // fixed-point layer-boundary format
};

struct ModelConfig {
  double alpha = 1.0;         // width multiplier in (0, 1]
  OutStrategy out = OutStrategy::A;
  int input_hw = 500;         // square build-time input; execution is size-free
  int frozen_until = 98;      // training-freeze metadata, never used at inference
  AnchorSet anchors;          // empty selects default_anchors() at build
};

// One named weight payload; which vector is live follows the graph's storage
// kind. Shapes: conv (kh, kw, cin, cout); depthwise (kh, kw, c, 1);
// batch-norm (4, c, 1, 1) laid out gamma[c] beta[c] mean[c] var[c];
// bias (c, 1, 1, 1).
struct Blob {
  std::string name;
  int d0 = 0, d1 = 0, d2 = 0, d3 = 0;
  std::vector<float> f32;
  std::vector<std::uint16_t> f16;
  std::vector<std::int32_t> q;

  std::size_t elems() const {
    return static_cast<std::size_t>(d0) * d1 * d2 * d3;
  }
};

struct Layer {
  LayerKind kind = LayerKind::conv;
  std::string name;  // "NNN_role"; the zero-padded index keeps lexical == topological
  std::string tag;   // "", "breakpoint_A", "breakpoint_B"
  int kernel = 1, stride = 1;
  int in_ch = 0, out_ch = 0;
  bool relu6 = false;
  bool bn = false;    // folded into the conv at execution time
  bool bias = false;
  int in0 = -1, in1 = -1;  // producer layer indices; -1 is the network input
  int wblob = -1, bnblob = -1, biasblob = -1;
  int out_h = 0, out_w = 0;  // spatial extents at cfg.input_hw
};

struct ModelGraph {
  ModelConfig cfg;
  StorageFormat storage;
  std::vector<Layer> layers;
  std::vector<Blob> blobs;
  int head_layer = -1;
  int head_stride = 16;
};

// Nearest multiple of 8, minimum 8, bumped up when rounding would lose more
// than 10% of the requested width.
int round_channels(double v);

// MobileNetV2 backbone with the chosen head strategy. OutA cuts the network at
// the stride-16 expansion tap; OutB runs through the stride-32 top; OutC
// concatenates the stride-16 tap with the 2x-upsampled top (the two maps must
// align exactly, which holds for inputs divisible by 32 and for the 500-px
// build). Backbone convs are bias-free with batch norm; the head is a single
// 1x1 conv with bias and 5 * anchor_count outputs. Weights draw from a seeded
// uniform(-0.5, 0.5); norms initialize to identity.
ModelGraph build_detector(const ModelConfig& cfg, std::uint64_t seed);

std::int64_t parameter_count(const ModelGraph& g);

// Accounting bytes per stored parameter: fp32 4, fp16 2, qformat word_bits/8.
double bytes_per_param(const StorageFormat& f);
double storage_bytes(const ModelGraph& g, const StorageFormat& f);
double storage_mb(const ModelGraph& g, const StorageFormat& f);

// Re-encodes every blob from an fp32 source into the target storage.
ModelGraph cast_storage(const ModelGraph& g, const StorageFormat& f);

// Blob values widened to float under the graph's storage kind.
std::vector<float> blob_as_float(const ModelGraph& g, int blob_index);

// Text manifest plus little-endian payload with per-blob byte offsets;
// save -> load -> save is byte-identical.
void save_model(const ModelGraph& g, const std::string& path);
ModelGraph load_model(const std::string& path);

// Structural consistency: wiring is topological, channel counts chain, and the
// single head emits 5 channels per anchor.
void validate(const ModelGraph& g);

}  // namespace qdm
