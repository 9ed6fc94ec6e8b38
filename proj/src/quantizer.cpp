#include "qdm/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

#include "qdm/engine.hpp"

namespace qdm {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

void sort_profile(ActivationProfile& p) {
  std::sort(p.layers.begin(), p.layers.end(),
            [](const LayerRange& a, const LayerRange& b) {
              return a.layer_id < b.layer_id;
            });
}

}  // namespace

ActivationProfile profile_activations(const ModelGraph& g,
                                      const std::vector<Tensor>& images) {
  if (images.empty())
    throw std::invalid_argument("calibration set must contain at least one image");
  if (g.storage.kind == StorageFormat::Kind::qformat)
    fail("profiling requires a float-storage model");
  std::map<std::string, LayerRange> acc;
  const LayerRecorder rec = [&acc](int, const Layer& L, const Tensor& out) {
    LayerRange& r = acc.try_emplace(L.name, LayerRange{L.name,
                                    std::numeric_limits<double>::infinity(),
                                    -std::numeric_limits<double>::infinity(), 0})
                        .first->second;
    for (float v : out.data) {
      r.min_v = std::min(r.min_v, static_cast<double>(v));
      r.max_v = std::max(r.max_v, static_cast<double>(v));
    }
    r.count += out.data.size();
  };
  for (const Tensor& img : images) forward_float(g, img, rec);
  ActivationProfile p;
  for (auto& [_, r] : acc) p.layers.push_back(r);
  sort_profile(p);
  return p;
}

ActivationProfile merge(const ActivationProfile& a, const ActivationProfile& b) {
  std::map<std::string, LayerRange> acc;
  for (const ActivationProfile* p : {&a, &b})
    for (const LayerRange& r : p->layers) {
      auto [it, fresh] = acc.try_emplace(r.layer_id, r);
      if (!fresh) {
        it->second.min_v = std::min(it->second.min_v, r.min_v);
        it->second.max_v = std::max(it->second.max_v, r.max_v);
        it->second.count += r.count;
      }
    }
  ActivationProfile out;
  for (auto& [_, r] : acc) out.layers.push_back(r);
  sort_profile(out);
  return out;
}

void save_profile(const ActivationProfile& p, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail("cannot write profile: " + path);
  ActivationProfile sorted = p;
  sort_profile(sorted);
  char buf[160];
  for (const LayerRange& r : sorted.layers) {
    std::snprintf(buf, sizeof buf, "%s %.17g %.17g %llu\n", r.layer_id.c_str(),
                  r.min_v, r.max_v, static_cast<unsigned long long>(r.count));
    out << buf;
  }
  if (!out) fail("write failed: " + path);
}

ActivationProfile load_profile(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open profile: " + path);
  ActivationProfile p;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    LayerRange r;
    unsigned long long count = 0;
    if (!(ls >> r.layer_id >> r.min_v >> r.max_v >> count))
      fail(path + ":" + std::to_string(line_no) + ": malformed profile line");
    if (r.min_v > r.max_v)
      fail(path + ":" + std::to_string(line_no) + ": min exceeds max");
    r.count = count;
    p.layers.push_back(r);
  }
  if (p.layers.empty()) fail(path + ": profile has no layers");
  sort_profile(p);
  return p;
}

std::pair<double, double> weight_range(const ModelGraph& g) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (std::size_t i = 0; i < g.blobs.size(); ++i)
    for (float v : blob_as_float(g, static_cast<int>(i))) {
      lo = std::min(lo, static_cast<double>(v));
      hi = std::max(hi, static_cast<double>(v));
    }
  if (!(lo <= hi)) fail("model has no weights");
  return {lo, hi};
}

namespace {

QFormat format_for(double lo, double hi, int word_bits, const char* what) {
  const int m = bits_for_range(lo, hi);
  const int n = word_bits - 1 - m;
  if (n < 0)
    fail(std::string(what) + " range [" + std::to_string(lo) + ", " +
         std::to_string(hi) + "] is unrepresentable in " +
         std::to_string(word_bits) + "-bit words");
  return make_qformat(m, n);
}

}  // namespace

QuantPlan plan_quantization(const ActivationProfile& p,
                            std::pair<double, double> weight_range,
                            int word_bits) {
  if (p.layers.empty()) throw std::invalid_argument("empty activation profile");
  double lo = 0, hi = 0;  // zero belongs to every activation range
  for (const LayerRange& r : p.layers) {
    lo = std::min(lo, r.min_v);
    hi = std::max(hi, r.max_v);
  }
  QuantPlan plan;
  plan.activation_fmt = format_for(lo, hi, word_bits, "activation");
  plan.weight_fmt =
      format_for(weight_range.first, weight_range.second, word_bits, "weight");
  return plan;
}

QuantPlan plan_forced_fractional(const ActivationProfile& p,
                                 std::pair<double, double> weight_range,
                                 int word_bits, int n) {
  if (n < 0 || n > word_bits - 1)
    throw std::invalid_argument("fractional bits must lie in [0, word_bits-1]");
  const QFormat fmt = make_qformat(word_bits - 1 - n, n);
  const double lo = fmt.min_value(), hi = fmt.max_value();
  for (const LayerRange& r : p.layers)
    if (r.min_v < lo || r.max_v > hi)
      fail("activation range of layer " + r.layer_id + " [" +
           std::to_string(r.min_v) + ", " + std::to_string(r.max_v) +
           "] does not fit Q" + std::to_string(fmt.m) + "." +
           std::to_string(fmt.n));
  if (weight_range.first < lo || weight_range.second > hi)
    fail("weight range [" + std::to_string(weight_range.first) + ", " +
         std::to_string(weight_range.second) + "] does not fit Q" +
         std::to_string(fmt.m) + "." + std::to_string(fmt.n));
  return {fmt, fmt};
}

ModelGraph quantize_model(const ModelGraph& g, const QuantPlan& plan) {
  if (g.storage.kind == StorageFormat::Kind::qformat)
    fail("model is already quantized");
  if (plan.weight_fmt.word_bits() != plan.activation_fmt.word_bits())
    throw std::invalid_argument("plan formats must share word width");
  ModelGraph src = g;
  if (g.storage.kind == StorageFormat::Kind::fp16) {
    // widen to fp32 first so the cast below starts from floats
    for (std::size_t i = 0; i < src.blobs.size(); ++i)
      src.blobs[i].f32 = blob_as_float(src, static_cast<int>(i));
    for (Blob& b : src.blobs) {
      b.f16.clear();
      b.f16.shrink_to_fit();
    }
    src.storage.kind = StorageFormat::Kind::fp32;
  }
  StorageFormat f;
  f.kind = StorageFormat::Kind::qformat;
  f.weight_fmt = plan.weight_fmt;
  f.activation_fmt = plan.activation_fmt;
  return cast_storage(src, f);
}

}  // namespace qdm
