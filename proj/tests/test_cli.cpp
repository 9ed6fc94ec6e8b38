#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "qdm/data_io.hpp"
#include "qdm/detection.hpp"
#include "qdm/model.hpp"
#include "qdm/quantizer.hpp"

namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Scratch directory shared by all cases in this process.
const fs::path& work_dir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() /
                 ("qdm_cli_" + std::to_string(::getpid()));
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string wpath(const std::string& name) { return (work_dir() / name).string(); }

RunResult run_cli(const std::string& args) {
  const char* bin = std::getenv("QDM_BIN");
  REQUIRE(bin != nullptr);
  const std::string out_f = wpath("last_stdout.txt");
  const std::string err_f = wpath("last_stderr.txt");
  const std::string cmd =
      std::string("'") + bin + "' " + args + " >'" + out_f + "' 2>'" + err_f + "'";
  const int raw = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.out = slurp(out_f);
  r.err = slurp(err_f);
  return r;
}

// The machine-readable summary is the last stdout line.
nlohmann::json manifest_of(const RunResult& r) {
  REQUIRE(!r.out.empty());
  std::size_t end = r.out.size();
  while (end > 0 && r.out[end - 1] == '\n') --end;
  const std::size_t start = r.out.rfind('\n', end - 1);
  const std::string line =
      r.out.substr(start == std::string::npos ? 0 : start + 1,
                   end - (start == std::string::npos ? 0 : start + 1));
  return nlohmann::json::parse(line);
}

bool contains(const std::string& hay, const std::string& needle) {
  return hay.find(needle) != std::string::npos;
}

// Flat gray test image with one brighter square.
void write_test_image(const std::string& path, int hw, int seed) {
  qdm::Image img;
  img.width = hw;
  img.height = hw;
  img.channels = 3;
  img.pixels.assign(static_cast<std::size_t>(hw) * hw * 3,
                    static_cast<std::uint8_t>(96 + 8 * (seed % 5)));
  const int x0 = hw / 4 + seed % 3, side = hw / 3;
  for (int y = x0; y < x0 + side && y < hw; ++y)
    for (int x = x0; x < x0 + side && x < hw; ++x)
      for (int c = 0; c < 3; ++c)
        img.pixels[(static_cast<std::size_t>(y) * hw + x) * 3 + c] =
            static_cast<std::uint8_t>(190 + c * 10);
  qdm::save_image(img, path);
}

}  // namespace

TEST_CASE("gen-model builds, reports, and saves deterministically") {
  const std::string m1 = wpath("gen1.qdm"), m2 = wpath("gen2.qdm");
  const RunResult r = run_cli(
      "gen-model --alpha 0.35 --input-size 64 --seed 42 --output '" + m1 + "'");
  REQUIRE(r.code == 0);
  CHECK(contains(r.out, "params 122637"));
  CHECK(contains(r.out, "size fp32"));

  const auto j = manifest_of(r);
  CHECK(j.at("command") == "gen-model");
  CHECK(j.at("params") == 122637);
  CHECK(j.at("config").at("alpha") == 0.35);

  const qdm::ModelGraph g = qdm::load_model(m1);
  CHECK(qdm::parameter_count(g) == 122637);
  CHECK(g.cfg.anchors.size() == 25);

  // same seed, same bytes; different seed, different bytes
  REQUIRE(run_cli("gen-model --alpha 0.35 --input-size 64 --seed 42 --output '" +
                  m2 + "'").code == 0);
  CHECK(slurp(m1) == slurp(m2));
  REQUIRE(run_cli("gen-model --alpha 0.35 --input-size 64 --seed 43 --output '" +
                  m2 + "'").code == 0);
  CHECK(slurp(m1) != slurp(m2));
}

TEST_CASE("gen-model honors an anchor file") {
  const std::string af = wpath("anchors.txt"), m = wpath("gen_anchored.qdm");
  {
    qdm::AnchorSet s;
    s.anchors = {{24, 24, 0}, {48, 48, 1}, {96, 96, 2}};
    qdm::save_anchors(s, af);
  }
  const RunResult r =
      run_cli("gen-model --alpha 0.35 --input-size 64 --anchors '" + af +
              "' --output '" + m + "'");
  REQUIRE(r.code == 0);
  const qdm::ModelGraph g = qdm::load_model(m);
  CHECK(g.cfg.anchors.size() == 3);
  CHECK(g.layers[g.head_layer].out_ch == 15);
}

TEST_CASE("profile, quantize, detect, eval pipeline") {
  // corpus
  const std::string img_dir = wpath("imgs");
  fs::create_directories(img_dir);
  std::vector<std::string> ids = {"img_a", "img_b", "img_c"};
  for (std::size_t i = 0; i < ids.size(); ++i)
    write_test_image(img_dir + "/" + ids[i] + ".ppm", 64, static_cast<int>(i));
  const std::string list_f = wpath("ids.txt");
  std::ofstream(list_f) << "img_a\nimg_b\nimg_c\n";

  const std::string model_f = wpath("pipe_model.qdm");
  REQUIRE(run_cli("gen-model --alpha 0.35 --input-size 64 --seed 7 --output '" +
                  model_f + "'").code == 0);

  // profile from the image directory
  const std::string prof_f = wpath("pipe_profile.txt");
  const RunResult pr = run_cli("profile --model '" + model_f + "' --images '" +
                               img_dir + "' --output '" + prof_f + "'");
  REQUIRE(pr.code == 0);
  CHECK(contains(pr.out, "profiled"));
  const qdm::ActivationProfile prof = qdm::load_profile(prof_f);
  const qdm::ModelGraph fg = qdm::load_model(model_f);
  CHECK(prof.layers.size() == fg.layers.size());
  CHECK(manifest_of(pr).at("layers") == fg.layers.size());

  // quantize with automatic format selection
  const std::string q_f = wpath("pipe_q.qdm");
  const RunResult qr =
      run_cli("quantize --model '" + model_f + "' --profile '" + prof_f +
              "' --auto --output '" + q_f + "'");
  REQUIRE(qr.code == 0);
  CHECK(contains(qr.out, "weights Q"));
  const qdm::ModelGraph qg = qdm::load_model(q_f);
  CHECK(qg.storage.kind == qdm::StorageFormat::Kind::qformat);
  CHECK(qdm::parameter_count(qg) == qdm::parameter_count(fg));

  // detect over the list with the quantized model
  const std::string det_f = wpath("pipe_dets.txt");
  const RunResult dr =
      run_cli("detect --model '" + q_f + "' --list '" + list_f + "' --root '" +
              img_dir + "' --ext .ppm --scales 1 --score-t 0.2 --output '" +
              det_f + "'");
  REQUIRE(dr.code == 0);
  const auto dets = qdm::read_detections(det_f);
  CHECK(dets.size() == manifest_of(dr).at("images_ok"));
  REQUIRE(!dets.empty());

  // a second run with two workers produces identical bytes
  const std::string det2_f = wpath("pipe_dets2.txt");
  REQUIRE(run_cli("detect --model '" + q_f + "' --list '" + list_f +
                  "' --root '" + img_dir +
                  "' --ext .ppm --scales 1 --score-t 0.2 --threads 2 "
                  "--output '" + det2_f + "'").code == 0);
  CHECK(slurp(det_f) == slurp(det2_f));

  // single-image mode agrees with the list entry
  const std::string det3_f = wpath("pipe_dets3.txt");
  const RunResult sr =
      run_cli("detect --model '" + q_f + "' --image '" + img_dir +
              "/img_a.ppm' --scales 1 --score-t 0.2 --output '" + det3_f + "'");
  REQUIRE(sr.code == 0);
  CHECK(manifest_of(sr).at("images_total") == 1);
}

TEST_CASE("quantize reports the planned formats from the profile") {
  const std::string model_f = wpath("fmt_model.qdm");
  REQUIRE(run_cli("gen-model --alpha 0.35 --input-size 64 --output '" + model_f +
                  "'").code == 0);
  // hand-written profile with wide extremes pins the activation format
  const std::string prof_f = wpath("fmt_profile.txt");
  std::ofstream(prof_f) << "000_stem -242.14 100.0 64\n001_x -1.0 155.91 64\n";

  const RunResult r = run_cli("quantize --model '" + model_f + "' --profile '" +
                              prof_f + "' --auto --output '" +
                              wpath("fmt_q.qdm") + "'");
  REQUIRE(r.code == 0);
  // init weights live in (-0.5, 0.5) but identity BN carries exact 1.0s
  CHECK(contains(r.out, "activations Q8.7"));
  CHECK(contains(r.out, "weights Q1.14"));
  const auto j = manifest_of(r);
  CHECK(j.at("activation_fmt")[0] == 8);
  CHECK(j.at("activation_fmt")[1] == 7);

  // forced fractional width
  const RunResult f = run_cli("quantize --model '" + model_f + "' --profile '" +
                              prof_f + "' --fractional 7 --output '" +
                              wpath("fmt_q2.qdm") + "'");
  REQUIRE(f.code == 0);
  CHECK(contains(f.out, "activations Q8.7"));
}

TEST_CASE("eval scores planted detections at AP 1.0") {
  // two fold files, one image each, exactly-decimal geometry
  const std::string ann1 = wpath("fold1.txt"), ann2 = wpath("fold2.txt");
  {
    std::vector<qdm::FddbRecord> recs(1);
    recs[0].image_id = "set/img_1";
    recs[0].faces = {{40.0, 25.0, 0.5, 100.0, 80.0}};
    qdm::write_fddb(recs, ann1);
    recs[0].image_id = "set/img_2";
    recs[0].faces = {{30.0, 20.0, -0.25, 64.0, 64.0}};
    qdm::write_fddb(recs, ann2);
  }
  const std::string det_f = wpath("planted_dets.txt");
  {
    std::vector<qdm::ImageDetections> dets(2);
    dets[0].image_id = "set/img_1";
    dets[0].dets = {{qdm::ellipse_to_box({40.0, 25.0, 0.5, 100.0, 80.0}), 0.9, 1.0}};
    dets[1].image_id = "set/img_2";
    dets[1].dets = {{qdm::ellipse_to_box({30.0, 20.0, -0.25, 64.0, 64.0}), 0.8, 1.0}};
    qdm::write_detections(dets, det_f);
  }
  const std::string csv_f = wpath("pr.csv");
  const RunResult r = run_cli("eval --dets '" + det_f + "' --annotations '" +
                              ann1 + "' '" + ann2 + "' --pr-csv '" + csv_f + "'");
  REQUIRE(r.code == 0);
  CHECK(contains(r.out, "AP 1.000000"));
  CHECK(contains(r.out, "fold "));
  const auto j = manifest_of(r);
  CHECK(j.at("ap") == 1.0);
  CHECK(j.at("gt_count") == 2);
  CHECK(contains(slurp(csv_f), "rank,precision,recall"));

  // detections for an unknown image are a hard error
  const std::string bad_f = wpath("bad_dets.txt");
  {
    std::vector<qdm::ImageDetections> dets(1);
    dets[0].image_id = "set/img_unknown";
    dets[0].dets = {{{10, 10, 5, 5}, 0.5, 1.0}};
    qdm::write_detections(dets, bad_f);
  }
  const RunResult bad = run_cli("eval --dets '" + bad_f + "' --annotations '" +
                                ann1 + "'");
  CHECK(bad.code == 2);
  CHECK(contains(bad.err, "missing from annotations"));
  CHECK(contains(bad.err, "set/img_unknown"));
}

TEST_CASE("bench times both execution paths") {
  const std::string model_f = wpath("bench_model.qdm");
  REQUIRE(run_cli("gen-model --alpha 0.35 --input-size 64 --output '" + model_f +
                  "'").code == 0);
  const RunResult r = run_cli("bench --model '" + model_f +
                              "' --input-size 64 --iters 2");
  REQUIRE(r.code == 0);
  CHECK(contains(r.out, "fp32: mean"));
  CHECK(contains(r.out, "q16"));
  CHECK(contains(r.out, "latency ratio"));
  const auto j = manifest_of(r);
  CHECK(j.at("ratio").get<double>() > 0.0);
}

TEST_CASE("exit codes separate usage, data, and success") {
  // usage errors -> 1
  CHECK(run_cli("no-such-command").code == 1);
  CHECK(run_cli("gen-model --output x --no-such-flag").code == 1);
  CHECK(run_cli("gen-model").code == 1);  // missing required --output
  CHECK(run_cli("detect --model m").code == 1);
  CHECK(run_cli("quantize --model a --profile b --output c").code == 1);
  CHECK(run_cli("quantize --model a --profile b --auto --fractional 9 "
                "--output c").code == 1);
  CHECK(run_cli("detect --model m --threads 0 --output d").code == 1);

  // help -> 0
  CHECK(run_cli("--help").code == 0);
  CHECK(run_cli("gen-model --help").code == 0);

  // data errors -> 2
  CHECK(run_cli("profile --model missing.qdm --images . --output p").code == 2);
  CHECK(run_cli("detect --model missing.qdm --image x.ppm --output d").code == 2);
  CHECK(run_cli("gen-model --alpha 2.0 --output '" + wpath("never.qdm") +
                "'").code == 2);
  CHECK(run_cli("gen-model --alpha 0.35 --input-size 100 --out C --output '" +
                wpath("never.qdm") + "'").code == 2);

  // quantizing an already-quantized model -> 2
  const std::string model_f = wpath("twice_model.qdm");
  const std::string prof_f = wpath("twice_profile.txt");
  const std::string q_f = wpath("twice_q.qdm");
  REQUIRE(run_cli("gen-model --alpha 0.35 --input-size 64 --output '" + model_f +
                  "'").code == 0);
  std::ofstream(prof_f) << "000_stem -1.0 1.0 64\n";
  REQUIRE(run_cli("quantize --model '" + model_f + "' --profile '" + prof_f +
                  "' --auto --output '" + q_f + "'").code == 0);
  const RunResult again = run_cli("quantize --model '" + q_f + "' --profile '" +
                                  prof_f + "' --auto --output '" +
                                  wpath("twice_q2.qdm") + "'");
  CHECK(again.code == 2);
  CHECK(contains(again.err, "already quantized"));
}
