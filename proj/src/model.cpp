#include "qdm/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "qdm/half.hpp"
#include "qdm/version.hpp"

namespace qdm {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

struct BlockSpec {
  int t, c, s;
};

// MobileNetV2 inverted-residual schedule (expansion, channels, stride).
constexpr BlockSpec kBlocks[17] = {
    {1, 16, 1},  {6, 24, 2},  {6, 24, 1},  {6, 32, 2},  {6, 32, 1},
    {6, 32, 1},  {6, 64, 2},  {6, 64, 1},  {6, 64, 1},  {6, 64, 1},
    {6, 96, 1},  {6, 96, 1},  {6, 96, 1},  {6, 160, 2}, {6, 160, 1},
    {6, 160, 1}, {6, 320, 1}};

// The stride-16 tap is the expansion relu of the first stride-2 160 block.
constexpr int kTapBlock = 13;

std::string fmt(const char* f, ...) {
  char buf[128];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

}  // namespace

int round_channels(double v) {
  int nv = std::max(8, static_cast<int>(v + 4.0) / 8 * 8);
  if (nv < 0.9 * v) nv += 8;
  return nv;
}

namespace {

struct Builder {
  ModelGraph g;

  int channels_of(int idx) const {
    return idx < 0 ? 3 : g.layers[idx].out_ch;
  }
  std::pair<int, int> dims_of(int idx) const {
    if (idx < 0) return {g.cfg.input_hw, g.cfg.input_hw};
    return {g.layers[idx].out_h, g.layers[idx].out_w};
  }

  int add_blob(const std::string& name, int d0, int d1, int d2, int d3) {
    g.blobs.push_back({name, d0, d1, d2, d3, {}, {}, {}});
    return static_cast<int>(g.blobs.size()) - 1;
  }

  int add_conv(const std::string& role, LayerKind kind, int kernel, int stride,
               int input, int out_ch, bool relu, bool bn, bool bias) {
    Layer L;
    L.kind = kind;
    L.name = fmt("%03d_%s", static_cast<int>(g.layers.size()), role.c_str());
    L.kernel = kernel;
    L.stride = stride;
    L.in_ch = channels_of(input);
    L.out_ch = kind == LayerKind::depthwise ? L.in_ch : out_ch;
    L.relu6 = relu;
    L.bn = bn;
    L.bias = bias;
    L.in0 = input;
    const auto [h, w] = dims_of(input);
    L.out_h = (h + stride - 1) / stride;  // same padding
    L.out_w = (w + stride - 1) / stride;
    if (kind == LayerKind::depthwise)
      L.wblob = add_blob(L.name + ".w", kernel, kernel, L.in_ch, 1);
    else
      L.wblob = add_blob(L.name + ".w", kernel, kernel, L.in_ch, L.out_ch);
    if (bn) L.bnblob = add_blob(L.name + ".bn", 4, L.out_ch, 1, 1);
    if (bias) L.biasblob = add_blob(L.name + ".bias", L.out_ch, 1, 1, 1);
    g.layers.push_back(L);
    return static_cast<int>(g.layers.size()) - 1;
  }

  int add_simple(const std::string& role, LayerKind kind, int in0, int in1) {
    Layer L;
    L.kind = kind;
    L.name = fmt("%03d_%s", static_cast<int>(g.layers.size()), role.c_str());
    L.in0 = in0;
    L.in1 = in1;
    L.in_ch = channels_of(in0);
    const auto [h, w] = dims_of(in0);
    if (kind == LayerKind::add) {
      L.out_ch = L.in_ch;
      L.out_h = h;
      L.out_w = w;
    } else if (kind == LayerKind::upsample2x) {
      L.out_ch = L.in_ch;
      L.out_h = 2 * h;
      L.out_w = 2 * w;
    } else {  // concat
      L.out_ch = L.in_ch + channels_of(in1);
      L.out_h = h;
      L.out_w = w;
    }
    g.layers.push_back(L);
    return static_cast<int>(g.layers.size()) - 1;
  }
};

}  // namespace

ModelGraph build_detector(const ModelConfig& cfg_in, std::uint64_t seed) {
  ModelConfig cfg = cfg_in;
  if (!(cfg.alpha > 0.0) || cfg.alpha > 1.0)
    throw std::invalid_argument("alpha must lie in (0, 1]");
  if (cfg.input_hw < 32) throw std::invalid_argument("input size too small");
  if (cfg.anchors.anchors.empty()) cfg.anchors = default_anchors();

  Builder b;
  b.g.cfg = cfg;

  int prev = b.add_conv("stem", LayerKind::conv, 3, 2, -1,
                        round_channels(32 * cfg.alpha), true, true, false);
  int tap_a = -1;
  for (int bi = 0; bi < 17; ++bi) {
    const BlockSpec& bs = kBlocks[bi];
    const int in_ch = b.channels_of(prev);
    const int out_ch = round_channels(bs.c * cfg.alpha);
    int x = prev;
    if (bs.t != 1) {
      x = b.add_conv(fmt("b%02d_expand", bi), LayerKind::conv, 1, 1, x,
                     bs.t * in_ch, true, true, false);
      if (bi == kTapBlock) {
        tap_a = x;
        b.g.layers[x].tag = "breakpoint_A";
        if (cfg.out == OutStrategy::A) break;
      }
    }
    x = b.add_conv(fmt("b%02d_dw", bi), LayerKind::depthwise, 3, bs.s, x, 0,
                   true, true, false);
    x = b.add_conv(fmt("b%02d_project", bi), LayerKind::conv, 1, 1, x, out_ch,
                   false, true, false);
    if (bs.s == 1 && in_ch == out_ch)
      x = b.add_simple(fmt("b%02d_add", bi), LayerKind::add, prev, x);
    prev = x;
  }

  int head_input = -1;
  if (cfg.out == OutStrategy::A) {
    head_input = tap_a;
    b.g.head_stride = 16;
  } else {
    const int top = b.add_conv("top_conv", LayerKind::conv, 1, 1, prev, 1280,
                               true, true, false);
    b.g.layers[top].tag = "breakpoint_B";
    if (cfg.out == OutStrategy::B) {
      head_input = top;
      b.g.head_stride = 32;
    } else {
      const int up = b.add_simple("up_top", LayerKind::upsample2x, top, -1);
      const auto [ah, aw] = b.dims_of(tap_a);
      const auto [uh, uw] = b.dims_of(up);
      if (ah != uh || aw != uw)
        throw std::invalid_argument(fmt(
            "OutC needs the stride-16 map (%dx%d) to equal the upsampled "
            "stride-32 map (%dx%d); pick an input divisible by 32",
            ah, aw, uh, uw));
      head_input = b.add_simple("concat_ab", LayerKind::concat, tap_a, up);
      b.g.head_stride = 16;
    }
  }

  b.g.head_layer =
      b.add_conv("head", LayerKind::head, 1, 1, head_input,
                 5 * cfg.anchors.size(), false, false, true);

  // Seeded init: uniform(-0.5, 0.5) weights, identity norms, zero biases.
  std::mt19937_64 rng(seed);
  auto uni = [&rng] {
    return static_cast<float>((rng() >> 11) * 0x1.0p-53 - 0.5);
  };
  for (Blob& blob : b.g.blobs) {
    blob.f32.resize(blob.elems());
    if (blob.name.size() >= 3 &&
        blob.name.compare(blob.name.size() - 3, 3, ".bn") == 0) {
      const std::size_t c = blob.elems() / 4;
      for (std::size_t i = 0; i < c; ++i) blob.f32[i] = 1.0f;           // gamma
      for (std::size_t i = c; i < 3 * c; ++i) blob.f32[i] = 0.0f;       // beta, mean
      for (std::size_t i = 3 * c; i < 4 * c; ++i) blob.f32[i] = 1.0f;   // var
    } else if (blob.name.size() >= 5 &&
               blob.name.compare(blob.name.size() - 5, 5, ".bias") == 0) {
      std::fill(blob.f32.begin(), blob.f32.end(), 0.0f);
    } else {
      for (float& v : blob.f32) v = uni();
    }
  }

  validate(b.g);
  return b.g;
}

std::int64_t parameter_count(const ModelGraph& g) {
  std::int64_t n = 0;
  for (const Blob& b : g.blobs) n += static_cast<std::int64_t>(b.elems());
  return n;
}

double bytes_per_param(const StorageFormat& f) {
  switch (f.kind) {
    case StorageFormat::Kind::fp32: return 4.0;
    case StorageFormat::Kind::fp16: return 2.0;
    case StorageFormat::Kind::qformat: return f.weight_fmt.word_bits() / 8.0;
  }
  return 4.0;
}

double storage_bytes(const ModelGraph& g, const StorageFormat& f) {
  return static_cast<double>(parameter_count(g)) * bytes_per_param(f);
}

double storage_mb(const ModelGraph& g, const StorageFormat& f) {
  return storage_bytes(g, f) / (1024.0 * 1024.0);
}

ModelGraph cast_storage(const ModelGraph& g, const StorageFormat& f) {
  if (g.storage.kind != StorageFormat::Kind::fp32)
    fail("cast_storage requires an fp32 source model");
  ModelGraph out = g;
  out.storage = f;
  switch (f.kind) {
    case StorageFormat::Kind::fp32:
      break;
    case StorageFormat::Kind::fp16:
      for (Blob& b : out.blobs) {
        b.f16.resize(b.f32.size());
        for (std::size_t i = 0; i < b.f32.size(); ++i)
          b.f16[i] = float_to_half(b.f32[i]);
        b.f32.clear();
        b.f32.shrink_to_fit();
      }
      break;
    case StorageFormat::Kind::qformat:
      for (Blob& b : out.blobs) {
        b.q.resize(b.f32.size());
        for (std::size_t i = 0; i < b.f32.size(); ++i)
          b.q[i] = quantize(b.f32[i], f.weight_fmt).raw;
        b.f32.clear();
        b.f32.shrink_to_fit();
      }
      break;
  }
  return out;
}

std::vector<float> blob_as_float(const ModelGraph& g, int blob_index) {
  const Blob& b = g.blobs.at(static_cast<std::size_t>(blob_index));
  std::vector<float> out(b.elems());
  switch (g.storage.kind) {
    case StorageFormat::Kind::fp32:
      std::copy(b.f32.begin(), b.f32.end(), out.begin());
      break;
    case StorageFormat::Kind::fp16:
      for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = half_to_float(b.f16[i]);
      break;
    case StorageFormat::Kind::qformat:
      for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = static_cast<float>(
            dequantize_raw(b.q[i], g.storage.weight_fmt.n));
      break;
  }
  return out;
}

namespace {

const char* kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::depthwise: return "dw";
    case LayerKind::add: return "add";
    case LayerKind::upsample2x: return "up2x";
    case LayerKind::concat: return "concat";
    case LayerKind::head: return "head";
  }
  return "?";
}

LayerKind kind_from(const std::string& s, const std::string& where) {
  if (s == "conv") return LayerKind::conv;
  if (s == "dw") return LayerKind::depthwise;
  if (s == "add") return LayerKind::add;
  if (s == "up2x") return LayerKind::upsample2x;
  if (s == "concat") return LayerKind::concat;
  if (s == "head") return LayerKind::head;
  fail(where + ": unknown layer kind '" + s + "'");
}

int payload_elem_bytes(const StorageFormat& f) {
  switch (f.kind) {
    case StorageFormat::Kind::fp32: return 4;
    case StorageFormat::Kind::fp16: return 2;
    case StorageFormat::Kind::qformat: return (f.weight_fmt.word_bits() + 7) / 8;
  }
  return 4;
}

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Tracks the absolute byte offset so parse errors can name it.
struct LineReader {
  const std::string& text;
  std::size_t pos = 0;
  std::string path;

  bool next(std::string& line, std::size_t& line_start) {
    if (pos >= text.size()) return false;
    line_start = pos;
    const std::size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) {
      line = text.substr(pos);
      pos = text.size();
    } else {
      line = text.substr(pos, nl - pos);
      pos = nl + 1;
    }
    return true;
  }

  // Reads "key rest..." and demands the key.
  std::string expect(const std::string& key) {
    std::string line;
    std::size_t at = pos;
    if (!next(line, at))
      fail(path + ": truncated manifest at byte " + std::to_string(text.size()) +
           " (expected '" + key + "')");
    if (line.compare(0, key.size(), key) != 0 ||
        (line.size() > key.size() && line[key.size()] != ' '))
      fail(path + ": expected '" + key + "' at byte " + std::to_string(at) +
           ", found '" + line + "'");
    return line.size() > key.size() ? line.substr(key.size() + 1) : std::string();
  }
};

std::string kv(const std::string& token, const std::string& key,
               const std::string& where) {
  if (token.compare(0, key.size(), key) != 0 || token[key.size()] != '=')
    fail(where + ": expected '" + key + "=...', found '" + token + "'");
  return token.substr(key.size() + 1);
}

}  // namespace

void save_model(const ModelGraph& g, const std::string& path) {
  validate(g);
  std::ostringstream m;
  m << kModelMagic << '\n';
  m << "engine " << kEngineVersion << '\n';
  switch (g.storage.kind) {
    case StorageFormat::Kind::fp32: m << "storage fp32\n"; break;
    case StorageFormat::Kind::fp16: m << "storage fp16\n"; break;
    case StorageFormat::Kind::qformat:
      m << "storage q\n";
      m << "weight_fmt " << g.storage.weight_fmt.m << ' '
        << g.storage.weight_fmt.n << '\n';
      m << "activation_fmt " << g.storage.activation_fmt.m << ' '
        << g.storage.activation_fmt.n << '\n';
      break;
  }
  m << "alpha " << g17(g.cfg.alpha) << '\n';
  m << "out " << (g.cfg.out == OutStrategy::A   ? 'A'
                  : g.cfg.out == OutStrategy::B ? 'B'
                                                : 'C')
    << '\n';
  m << "input " << g.cfg.input_hw << '\n';
  m << "frozen " << g.cfg.frozen_until << '\n';
  m << "head_stride " << g.head_stride << '\n';
  m << "head_layer " << g.head_layer << '\n';
  m << "anchors " << g.cfg.anchors.size() << '\n';
  for (const Anchor& a : g.cfg.anchors.anchors)
    m << "anchor " << g17(a.w_a) << ' ' << g17(a.h_a) << '\n';
  m << "layers " << g.layers.size() << '\n';
  for (const Layer& L : g.layers) {
    m << "layer kind=" << kind_name(L.kind) << " name=" << L.name
      << " tag=" << (L.tag.empty() ? "-" : L.tag) << " kernel=" << L.kernel
      << " stride=" << L.stride << " in_ch=" << L.in_ch
      << " out_ch=" << L.out_ch << " relu6=" << (L.relu6 ? 1 : 0)
      << " bn=" << (L.bn ? 1 : 0) << " bias=" << (L.bias ? 1 : 0)
      << " in0=" << L.in0 << " in1=" << L.in1 << " w=" << L.wblob
      << " bnb=" << L.bnblob << " biasb=" << L.biasblob
      << " out_h=" << L.out_h << " out_w=" << L.out_w << '\n';
  }
  const int eb = payload_elem_bytes(g.storage);
  m << "blobs " << g.blobs.size() << '\n';
  std::size_t offset = 0;
  for (const Blob& b : g.blobs) {
    m << "blob name=" << b.name << " shape=" << b.d0 << ',' << b.d1 << ','
      << b.d2 << ',' << b.d3 << " offset=" << offset << '\n';
    offset += b.elems() * static_cast<std::size_t>(eb);
  }
  m << "data " << offset << '\n';

  std::string payload;
  payload.reserve(offset);
  auto put_le = [&payload](std::uint32_t v, int bytes) {
    for (int i = 0; i < bytes; ++i)
      payload.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  };
  for (const Blob& b : g.blobs) {
    switch (g.storage.kind) {
      case StorageFormat::Kind::fp32:
        for (float v : b.f32) put_le(std::bit_cast<std::uint32_t>(v), 4);
        break;
      case StorageFormat::Kind::fp16:
        for (std::uint16_t v : b.f16) put_le(v, 2);
        break;
      case StorageFormat::Kind::qformat:
        for (std::int32_t v : b.q)
          put_le(static_cast<std::uint32_t>(v), eb);
        break;
    }
  }
  if (payload.size() != offset) fail("internal: payload size mismatch");

  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write model file: " + path);
  const std::string manifest = m.str();
  out.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) fail("write failed: " + path);
}

ModelGraph load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open model file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();

  LineReader r{text, 0, path};
  {
    std::string magic;
    std::size_t at = 0;
    if (!r.next(magic, at) || magic != kModelMagic)
      fail(path + ": bad magic at byte 0 (not a '" + std::string(kModelMagic) +
           "' model file)");
  }
  ModelGraph g;
  r.expect("engine");  // recorded version; format compatibility rides the magic
  const std::string storage = r.expect("storage");
  if (storage == "fp32") {
    g.storage.kind = StorageFormat::Kind::fp32;
  } else if (storage == "fp16") {
    g.storage.kind = StorageFormat::Kind::fp16;
  } else if (storage == "q") {
    g.storage.kind = StorageFormat::Kind::qformat;
    int m = 0, n = 0;
    if (std::sscanf(r.expect("weight_fmt").c_str(), "%d %d", &m, &n) != 2)
      fail(path + ": bad weight_fmt");
    g.storage.weight_fmt = make_qformat(m, n);
    if (std::sscanf(r.expect("activation_fmt").c_str(), "%d %d", &m, &n) != 2)
      fail(path + ": bad activation_fmt");
    g.storage.activation_fmt = make_qformat(m, n);
  } else {
    fail(path + ": unknown storage kind '" + storage + "'");
  }
  g.cfg.alpha = std::stod(r.expect("alpha"));
  const std::string outs = r.expect("out");
  if (outs == "A")
    g.cfg.out = OutStrategy::A;
  else if (outs == "B")
    g.cfg.out = OutStrategy::B;
  else if (outs == "C")
    g.cfg.out = OutStrategy::C;
  else
    fail(path + ": unknown out strategy '" + outs + "'");
  g.cfg.input_hw = std::stoi(r.expect("input"));
  g.cfg.frozen_until = std::stoi(r.expect("frozen"));
  g.head_stride = std::stoi(r.expect("head_stride"));
  g.head_layer = std::stoi(r.expect("head_layer"));
  const int na = std::stoi(r.expect("anchors"));
  for (int i = 0; i < na; ++i) {
    const std::string a = r.expect("anchor");
    double w = 0, h = 0;
    if (std::sscanf(a.c_str(), "%lf %lf", &w, &h) != 2)
      fail(path + ": bad anchor line '" + a + "'");
    g.cfg.anchors.anchors.push_back({w, h, i});
  }

  const int nl = std::stoi(r.expect("layers"));
  for (int i = 0; i < nl; ++i) {
    const std::string where = path + ": layer " + std::to_string(i);
    std::istringstream ls(r.expect("layer"));
    std::string tok;
    Layer L;
    auto want = [&](const char* key) {
      if (!(ls >> tok)) fail(where + ": truncated layer line");
      return kv(tok, key, where);
    };
    L.kind = kind_from(want("kind"), where);
    L.name = want("name");
    L.tag = want("tag");
    if (L.tag == "-") L.tag.clear();
    L.kernel = std::stoi(want("kernel"));
    L.stride = std::stoi(want("stride"));
    L.in_ch = std::stoi(want("in_ch"));
    L.out_ch = std::stoi(want("out_ch"));
    L.relu6 = want("relu6") == "1";
    L.bn = want("bn") == "1";
    L.bias = want("bias") == "1";
    L.in0 = std::stoi(want("in0"));
    L.in1 = std::stoi(want("in1"));
    L.wblob = std::stoi(want("w"));
    L.bnblob = std::stoi(want("bnb"));
    L.biasblob = std::stoi(want("biasb"));
    L.out_h = std::stoi(want("out_h"));
    L.out_w = std::stoi(want("out_w"));
    g.layers.push_back(L);
  }

  const int nb = std::stoi(r.expect("blobs"));
  std::vector<std::size_t> offsets;
  for (int i = 0; i < nb; ++i) {
    const std::string where = path + ": blob " + std::to_string(i);
    std::istringstream ls(r.expect("blob"));
    std::string tok;
    auto want = [&](const char* key) {
      if (!(ls >> tok)) fail(where + ": truncated blob line");
      return kv(tok, key, where);
    };
    Blob b;
    b.name = want("name");
    if (std::sscanf(want("shape").c_str(), "%d,%d,%d,%d", &b.d0, &b.d1, &b.d2,
                    &b.d3) != 4)
      fail(where + ": bad shape");
    offsets.push_back(std::stoul(want("offset")));
    g.blobs.push_back(std::move(b));
  }

  const std::size_t data_bytes = std::stoul(r.expect("data"));
  const std::size_t payload_start = r.pos;
  if (text.size() - payload_start < data_bytes)
    fail(path + ": model file truncated at byte " + std::to_string(text.size()) +
         " (payload needs " + std::to_string(data_bytes) + " bytes from byte " +
         std::to_string(payload_start) + ")");

  const int eb = payload_elem_bytes(g.storage);
  for (std::size_t bi = 0; bi < g.blobs.size(); ++bi) {
    Blob& b = g.blobs[bi];
    const std::size_t need = b.elems() * static_cast<std::size_t>(eb);
    if (offsets[bi] + need > data_bytes)
      fail(path + ": blob '" + b.name + "' overruns payload at byte " +
           std::to_string(payload_start + offsets[bi]));
    const char* src = text.data() + payload_start + offsets[bi];
    auto get_le = [&](std::size_t elem) {
      std::uint32_t v = 0;
      for (int k = 0; k < eb; ++k)
        v |= static_cast<std::uint32_t>(
                 static_cast<unsigned char>(src[elem * eb + k]))
             << (8 * k);
      return v;
    };
    switch (g.storage.kind) {
      case StorageFormat::Kind::fp32:
        b.f32.resize(b.elems());
        for (std::size_t e = 0; e < b.f32.size(); ++e)
          b.f32[e] = std::bit_cast<float>(get_le(e));
        break;
      case StorageFormat::Kind::fp16:
        b.f16.resize(b.elems());
        for (std::size_t e = 0; e < b.f16.size(); ++e)
          b.f16[e] = static_cast<std::uint16_t>(get_le(e));
        break;
      case StorageFormat::Kind::qformat: {
        b.q.resize(b.elems());
        const int shift = 32 - 8 * eb;
        for (std::size_t e = 0; e < b.q.size(); ++e) {
          // sign-extend from eb bytes
          std::int32_t v = static_cast<std::int32_t>(get_le(e) << shift);
          b.q[e] = shift > 0 ? v >> shift : v;
        }
        break;
      }
    }
  }

  validate(g);
  return g;
}

void validate(const ModelGraph& g) {
  if (g.layers.empty()) fail("model has no layers");
  int heads = 0;
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    const Layer& L = g.layers[i];
    const std::string where = "layer '" + L.name + "'";
    auto check_input = [&](int idx) {
      if (idx >= static_cast<int>(i))
        fail(where + ": input " + std::to_string(idx) + " is not upstream");
    };
    check_input(L.in0);
    const int in0_ch = L.in0 < 0 ? 3 : g.layers[L.in0].out_ch;
    switch (L.kind) {
      case LayerKind::conv:
      case LayerKind::head:
      case LayerKind::depthwise:
        if (L.in_ch != in0_ch) fail(where + ": input channels do not chain");
        if (L.wblob < 0 || L.wblob >= static_cast<int>(g.blobs.size()))
          fail(where + ": missing weight blob");
        if (L.kind == LayerKind::depthwise && L.out_ch != L.in_ch)
          fail(where + ": depthwise cannot change channels");
        if (L.bn && L.bnblob < 0) fail(where + ": missing norm blob");
        if (L.bias && L.biasblob < 0) fail(where + ": missing bias blob");
        break;
      case LayerKind::add:
        check_input(L.in1);
        if (in0_ch != g.layers[L.in1].out_ch || L.out_ch != in0_ch)
          fail(where + ": add needs matching channels");
        break;
      case LayerKind::upsample2x:
        if (L.out_ch != in0_ch) fail(where + ": upsample keeps channels");
        break;
      case LayerKind::concat:
        check_input(L.in1);
        if (L.out_ch != in0_ch + g.layers[L.in1].out_ch)
          fail(where + ": concat channels must sum");
        break;
    }
    if (L.kind == LayerKind::head) ++heads;
  }
  if (heads != 1) fail("model must have exactly one head layer");
  if (g.head_layer < 0 || g.head_layer >= static_cast<int>(g.layers.size()) ||
      g.layers[g.head_layer].kind != LayerKind::head)
    fail("head_layer index does not point at the head");
  if (g.layers[g.head_layer].out_ch != 5 * g.cfg.anchors.size())
    fail("head emits " + std::to_string(g.layers[g.head_layer].out_ch) +
         " channels, expected 5 per anchor");
}

}  // namespace qdm
