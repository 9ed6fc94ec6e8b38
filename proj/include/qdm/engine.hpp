#pragma once

#include <functional>
#include <vector>

#include "qdm/detection.hpp"
#include "qdm/model.hpp"
#include "qdm/tensor.hpp"

namespace qdm {

// Observes every layer output during a float forward pass (profiling hook).
using LayerRecorder =
    std::function<void(int layer_index, const Layer& layer, const Tensor& out)>;

// Runs the graph in float. Batch norms fold into their convs at execution:
// scale = gamma / sqrt(var + 1e-3), bias = beta - mean * scale. Works for any
// storage kind by widening weights to float first.
Tensor forward_float(const ModelGraph& g, const Tensor& input,
                     const LayerRecorder& rec = {});

// Integer path for qformat models: inputs and every layer boundary live in
// storage.activation_fmt, folded weights are quantized to storage.weight_fmt,
// accumulation is exact at the joint scale with one rounded saturating
// requantization per layer.
QTensor forward_fixed(const ModelGraph& g, const QTensor& input);

// Head map from a [0,1] image tensor, dispatching on the storage kind
// (fixed-point models quantize the input and dequantize the head output).
HeadMap run_model(const ModelGraph& g, const Tensor& image);

// Full pyramid: resize, forward, rescale boxes to the original frame, NMS.
std::vector<Detection> detect_image(const ModelGraph& g, const Tensor& image,
                                    const std::vector<double>& scales,
                                    double score_threshold, double iou_threshold);

}  // namespace qdm
