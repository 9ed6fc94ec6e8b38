#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "qdm/detection.hpp"
#include "test_util.hpp"

using namespace qdm;

namespace {

std::string tmp_path(const char* name) {
  return (std::filesystem::temp_directory_path() /
          (std::string("qdm_det_") + std::to_string(::getpid()) + "_" + name))
      .string();
}

BBox random_box(qdmtest::Rng& rng) {
  return {rng.uniform(-200.0, 600.0), rng.uniform(-200.0, 600.0),
          rng.uniform(4.0, 400.0), rng.uniform(4.0, 400.0)};
}

// Independent O(n^2) greedy suppression used as the oracle.
std::vector<Detection> nms_bruteforce(std::vector<Detection> dets, double thr) {
  std::vector<Detection> kept;
  std::vector<char> used(dets.size(), 0);
  auto better = [&](std::size_t i, std::size_t j) {
    if (dets[i].score != dets[j].score) return dets[i].score > dets[j].score;
    if (dets[i].box.cy != dets[j].box.cy) return dets[i].box.cy < dets[j].box.cy;
    if (dets[i].box.cx != dets[j].box.cx) return dets[i].box.cx < dets[j].box.cx;
    return i < j;
  };
  for (;;) {
    std::size_t best = dets.size();
    for (std::size_t i = 0; i < dets.size(); ++i)
      if (!used[i] && (best == dets.size() || better(i, best))) best = i;
    if (best == dets.size()) break;
    used[best] = 1;
    kept.push_back(dets[best]);
    for (std::size_t i = 0; i < dets.size(); ++i)
      if (!used[i] && iou(dets[best].box, dets[i].box) >= thr) used[i] = 1;
  }
  return kept;
}

bool same_detections(const std::vector<Detection>& a,
                     const std::vector<Detection>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].score != b[i].score || a[i].box.cx != b[i].box.cx ||
        a[i].box.cy != b[i].box.cy || a[i].box.w != b[i].box.w ||
        a[i].box.h != b[i].box.h)
      return false;
  return true;
}

}  // namespace

TEST_CASE("default anchors are 25 log-uniform squares over [16, 360]") {
  const AnchorSet s = default_anchors();
  REQUIRE(s.size() == 25);
  CHECK(s.anchors.front().w_a == doctest::Approx(16.0));
  CHECK(s.anchors.back().w_a == doctest::Approx(360.0));
  const double ratio = s.anchors[1].w_a / s.anchors[0].w_a;
  for (int i = 0; i + 1 < 25; ++i) {
    CHECK(s.anchors[i].w_a == s.anchors[i].h_a);
    CHECK(s.anchors[i + 1].w_a / s.anchors[i].w_a == doctest::Approx(ratio));
    CHECK(s.anchors[i].id == i);
  }
}

TEST_CASE("anchor files round trip") {
  const std::string path = tmp_path("anchors.txt");
  const AnchorSet s = default_anchors();
  save_anchors(s, path);
  const AnchorSet r = load_anchors(path);
  REQUIRE(r.size() == s.size());
  for (int i = 0; i < s.size(); ++i) {
    CHECK(r.anchors[i].w_a == s.anchors[i].w_a);
    CHECK(r.anchors[i].h_a == s.anchors[i].h_a);
  }
  std::filesystem::remove(path);
  CHECK_THROWS(load_anchors(tmp_path("missing_anchors.txt")));
}

TEST_CASE("encode_box hand values") {
  const Anchor a{50, 50, 0};
  // box equal to the anchor at the cell center encodes to zero
  const RegressionTarget z = encode_box({100, 80, 50, 50}, a, 100, 80);
  CHECK(z.tx == 0.0);
  CHECK(z.ty == 0.0);
  CHECK(z.tw == 0.0);
  CHECK(z.th == 0.0);

  // offset of 25 on a 50-wide anchor, doubled width
  const RegressionTarget t = encode_box({125, 80, 100, 50}, a, 100, 80);
  CHECK(t.tx == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(t.tw == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(t.th == 0.0);

  CHECK_THROWS_AS(encode_box({0, 0, -1, 5}, a, 0, 0), std::invalid_argument);
  CHECK_THROWS_AS(encode_box({0, 0, 5, 0}, a, 0, 0), std::invalid_argument);
}

TEST_CASE("decode_box hand values") {
  const Anchor a{50, 50, 0};
  const BBox zero = decode_box({0, 0, 0, 0}, a, 24, 24);
  CHECK(zero.cx == 24.0);
  CHECK(zero.cy == 24.0);
  CHECK(zero.w == 50.0);
  CHECK(zero.h == 50.0);

  CHECK(decode_box({0, 0, std::log(2.0), 0}, a, 0, 0).w ==
        doctest::Approx(100.0).epsilon(1e-12));

  const BBox big = decode_box({0, 0, 20, 20}, a, 0, 0);
  CHECK(std::isfinite(big.w));
  CHECK(std::isfinite(big.h));
  CHECK(big.w > 1e9);
}

TEST_CASE("encode and decode invert each other") {
  qdmtest::Rng rng(7);
  for (int i = 0; i < 20000; ++i) {
    const Anchor a{rng.uniform(8.0, 300.0), rng.uniform(8.0, 300.0), 0};
    const double xa = rng.uniform(0.0, 500.0), ya = rng.uniform(0.0, 500.0);
    const BBox b = random_box(rng);
    const BBox back = decode_box(encode_box(b, a, xa, ya), a, xa, ya);
    CHECK(std::abs(back.cx - b.cx) <= 1e-9 * std::max(1.0, std::abs(b.cx)));
    CHECK(std::abs(back.cy - b.cy) <= 1e-9 * std::max(1.0, std::abs(b.cy)));
    CHECK(std::abs(back.w - b.w) <= 1e-9 * b.w);
    CHECK(std::abs(back.h - b.h) <= 1e-9 * b.h);

    const RegressionTarget t{rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0),
                             rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)};
    const RegressionTarget tt = encode_box(decode_box(t, a, xa, ya), a, xa, ya);
    CHECK(std::abs(tt.tx - t.tx) <= 1e-9);
    CHECK(std::abs(tt.ty - t.ty) <= 1e-9);
    CHECK(std::abs(tt.tw - t.tw) <= 1e-9);
    CHECK(std::abs(tt.th - t.th) <= 1e-9);
  }
}

TEST_CASE("iou") {
  const BBox u{0.5, 0.5, 1, 1};
  CHECK(iou(u, u) == 1.0);
  CHECK(iou(u, {10, 10, 1, 1}) == 0.0);
  // unit squares offset by half overlap one third
  CHECK(iou(u, {1.0, 0.5, 1, 1}) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  qdmtest::Rng rng(11);
  for (int i = 0; i < 2000; ++i) {
    const BBox a = random_box(rng), b = random_box(rng);
    const double v = iou(a, b);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    CHECK(v == iou(b, a));
  }
}

TEST_CASE("extract_detections") {
  AnchorSet one;
  one.anchors.push_back({50, 50, 0});
  HeadMap m{Tensor(1, 4, 4, 5, -100.0f), 16, one};

  CHECK(extract_detections(m, 0.5).empty());

  // logit 0 sits exactly at the 0.5 threshold; zero regression
  for (int ch = 0; ch < 5; ++ch) m.grid.at(0, 1, 1, ch) = 0.0f;
  auto dets = extract_detections(m, 0.5);
  REQUIRE(dets.size() == 1);
  CHECK(dets[0].score == doctest::Approx(0.5));
  CHECK(dets[0].box.cx == doctest::Approx(24.0));  // (1 + 0.5) * 16
  CHECK(dets[0].box.cy == doctest::Approx(24.0));
  CHECK(dets[0].box.w == doctest::Approx(50.0));
  CHECK(dets[0].box.h == doctest::Approx(50.0));

  HeadMap bad{Tensor(1, 2, 2, 7), 16, one};
  CHECK_THROWS_AS(extract_detections(bad, 0.5), std::invalid_argument);
}

TEST_CASE("nms basics") {
  const Detection d1{{10, 10, 8, 8}, 0.9, 1.0};
  const Detection d2{{10, 10, 8, 8}, 0.8, 1.0};
  CHECK(nms({d1}, 0.5).size() == 1);
  const auto two = nms({d2, d1}, 0.5);
  REQUIRE(two.size() == 1);
  CHECK(two[0].score == 0.9);

  // far-apart boxes all survive, ranked by score
  const auto far = nms({{{10, 10, 4, 4}, 0.3, 1}, {{100, 10, 4, 4}, 0.7, 1}},
                       0.5);
  REQUIRE(far.size() == 2);
  CHECK(far[0].score == 0.7);
}

TEST_CASE("nms matches the brute-force oracle") {
  qdmtest::Rng rng(13);
  for (int inst = 0; inst < 300; ++inst) {
    const int n = rng.uniform_int(1, inst % 10 == 0 ? 400 : 50);
    std::vector<Detection> dets;
    for (int i = 0; i < n; ++i) {
      Detection d{random_box(rng), rng.uniform(), 1.0};
      // quantized scores force tie-break coverage
      d.score = std::floor(d.score * 8) / 8;
      dets.push_back(d);
    }
    const double thr = rng.uniform(0.2, 0.7);
    const auto fast = nms(dets, thr);
    const auto slow = nms_bruteforce(dets, thr);
    REQUIRE(same_detections(fast, slow));

    // antichain and idempotence
    for (std::size_t i = 0; i < fast.size(); ++i)
      for (std::size_t j = i + 1; j < fast.size(); ++j)
        CHECK(iou(fast[i].box, fast[j].box) < thr);
    CHECK(same_detections(nms(fast, thr), fast));
  }
}

TEST_CASE("multi_scale_detect maps boxes back to the original frame") {
  AnchorSet one;
  one.anchors.push_back({50, 50, 0});

  // stub: a single confident cell at (1,1) with zero regression
  auto stub_hit = [&one](const Tensor&) {
    HeadMap m{Tensor(1, 4, 4, 5, -100.0f), 16, one};
    m.grid.at(0, 1, 1, 0) = 12.0f;
    for (int ch = 1; ch < 5; ++ch) m.grid.at(0, 1, 1, ch) = 0.0f;
    return m;
  };

  const Tensor img(1, 64, 64, 3, 0.5f);
  const auto at2 = multi_scale_detect(stub_hit, img, {2.0}, 0.5, 0.5);
  REQUIRE(at2.size() == 1);
  // decoded (24, 24, 50, 50) in the 2x frame lands on (12, 12, 25, 25)
  CHECK(at2[0].box.cx == doctest::Approx(12.0));
  CHECK(at2[0].box.cy == doctest::Approx(12.0));
  CHECK(at2[0].box.w == doctest::Approx(25.0));
  CHECK(at2[0].scale_of_origin == 2.0);

  // same original-frame box from every scale collapses to one detection
  auto stub_scaled = [&one](const Tensor& resized) {
    const double s = resized.shape.h / 64.0;
    HeadMap m{Tensor(1, 4, 4, 5, -100.0f), 16, one};
    m.grid.at(0, 1, 1, 0) = 12.0f;
    // regress so the decoded box is (40, 40, 60, 60) scaled by s
    const Anchor& a = m.anchors.anchors[0];
    m.grid.at(0, 1, 1, 1) = static_cast<float>((40.0 * s - 24.0) / a.w_a);
    m.grid.at(0, 1, 1, 2) = static_cast<float>((40.0 * s - 24.0) / a.h_a);
    m.grid.at(0, 1, 1, 3) = static_cast<float>(std::log(60.0 * s / a.w_a));
    m.grid.at(0, 1, 1, 4) = static_cast<float>(std::log(60.0 * s / a.h_a));
    return m;
  };
  const auto pooled = multi_scale_detect(stub_scaled, img, {0.5, 1.0, 2.0}, 0.5, 0.5);
  REQUIRE(pooled.size() == 1);
  CHECK(pooled[0].box.cx == doctest::Approx(40.0).epsilon(1e-5));
  CHECK(pooled[0].box.w == doctest::Approx(60.0).epsilon(1e-5));

  // silent stub gives an empty result
  auto stub_empty = [&one](const Tensor&) {
    return HeadMap{Tensor(1, 4, 4, 5, -100.0f), 16, one};
  };
  CHECK(multi_scale_detect(stub_empty, img, {0.5, 1.0, 2.0}, 0.5, 0.5).empty());

  // single 1.0 scale equals plain extract + nms
  qdmtest::Rng rng(17);
  HeadMap noisy{Tensor(1, 4, 4, 5), 16, one};
  for (float& v : noisy.grid.data) v = static_cast<float>(rng.uniform(-3.0, 3.0));
  auto stub_noisy = [&noisy](const Tensor&) { return noisy; };
  const auto ms = multi_scale_detect(stub_noisy, img, {1.0}, 0.3, 0.5);
  auto direct = extract_detections(noisy, 0.3);
  direct = nms(direct, 0.5);
  CHECK(same_detections(ms, direct));

  CHECK_THROWS_AS(multi_scale_detect(stub_empty, img, {0.0}, 0.5, 0.5),
                  std::invalid_argument);
}

TEST_CASE("detection files round trip in corner format") {
  const std::string path = tmp_path("dets.txt");
  std::vector<ImageDetections> all(2);
  all[0].image_id = "2002/07/19/big/img_130";
  all[0].dets = {{{10, 20, 4, 8}, 0.9, 1.0}, {{100, 50, 30, 30}, 0.25, 2.0}};
  all[1].image_id = "2002/07/25/big/img_2";
  write_detections(all, path);

  const auto back = read_detections(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].image_id == all[0].image_id);
  REQUIRE(back[0].dets.size() == 2);
  CHECK(back[0].dets[0].box.cx == doctest::Approx(10.0));
  CHECK(back[0].dets[0].box.cy == doctest::Approx(20.0));
  CHECK(back[0].dets[0].box.w == doctest::Approx(4.0));
  CHECK(back[0].dets[0].box.h == doctest::Approx(8.0));
  CHECK(back[0].dets[0].score == doctest::Approx(0.9));
  CHECK(back[1].dets.empty());

  // corner form on disk: left = cx - w/2
  std::ifstream in(path);
  std::string l1, l2, l3;
  std::getline(in, l1);
  std::getline(in, l2);
  std::getline(in, l3);
  CHECK(l1 == "2002/07/19/big/img_130");
  CHECK(l2 == "2");
  CHECK(l3 == "8.000000 16.000000 4.000000 8.000000 0.900000");
  std::filesystem::remove(path);

  CHECK_THROWS(read_detections(tmp_path("missing_dets.txt")));
}

TEST_CASE("wild boxes from untrained models survive the file format") {
  // raw-logit decoding can produce e+36 coordinates; every field must still
  // land on its own line instead of truncating into the neighbour
  const std::string path = tmp_path("wild_dets.txt");
  std::vector<ImageDetections> all(1);
  all[0].image_id = "synth/huge";
  all[0].dets = {{{-1.2e36, -2.2e22, 2.4e36, 4.4e22}, 1.0, 1.0},
                 {{3576.25, -1096.5, 8.0, 0.5}, 0.75, 1.0}};
  write_detections(all, path);

  const auto back = read_detections(path);
  REQUIRE(back.size() == 1);
  REQUIRE(back[0].dets.size() == 2);
  CHECK(back[0].dets[0].box.cx == doctest::Approx(-1.2e36));
  CHECK(back[0].dets[0].box.w == doctest::Approx(2.4e36));
  CHECK(back[0].dets[0].score == doctest::Approx(1.0));
  CHECK(back[0].dets[1].box.cx == doctest::Approx(3576.25));
  CHECK(back[0].dets[1].score == doctest::Approx(0.75));
  std::filesystem::remove(path);
}

TEST_CASE("malformed detection files name the problem") {
  const std::string path = tmp_path("bad_dets.txt");
  {
    std::ofstream out(path);
    out << "img_1\n2\n1 2 3 4 0.5\n";  // promises 2 boxes, delivers 1
  }
  CHECK_THROWS_WITH_AS(read_detections(path),
                       doctest::Contains("truncated detections"),
                       std::runtime_error);
  {
    std::ofstream out(path);
    out << "img_1\nnope\n";
  }
  CHECK_THROWS_WITH_AS(read_detections(path), doctest::Contains("bad detection"),
                       std::runtime_error);
  std::filesystem::remove(path);
}
