#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "qdm/data_io.hpp"
#include "qdm/engine.hpp"
#include "qdm/eval.hpp"
#include "qdm/model.hpp"
#include "qdm/quantizer.hpp"
#include "qdm/version.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;
using qdm::ModelGraph;
using qdm::StorageFormat;

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

// Every command ends by printing one machine-readable line, last on stdout.
void emit_manifest(ordered_json& j, Clock::time_point t0) {
  j["elapsed_ms"] = ms_since(t0);
  std::cout << j.dump() << std::endl;
}

ordered_json new_manifest(const std::string& command) {
  ordered_json j;
  j["command"] = command;
  j["engine_version"] = qdm::kEngineVersion;
  return j;
}

std::string storage_name(const StorageFormat& f) {
  switch (f.kind) {
    case StorageFormat::Kind::fp32: return "fp32";
    case StorageFormat::Kind::fp16: return "fp16";
    case StorageFormat::Kind::qformat:
      return "Q" + std::to_string(f.weight_fmt.m) + "." +
             std::to_string(f.weight_fmt.n);
  }
  return "?";
}

std::vector<std::string> list_image_files(const std::string& dir) {
  std::vector<std::string> files;
  if (!fs::is_directory(dir))
    throw std::runtime_error("not a directory: " + dir);
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string ext = e.path().extension().string();
    if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm")
      files.push_back(e.path().string());
  }
  std::sort(files.begin(), files.end());
  if (files.empty())
    throw std::runtime_error("no .pgm/.ppm/.pnm images in " + dir);
  return files;
}

std::vector<std::string> read_id_list(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open list file: " + path);
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) ids.push_back(line);
  }
  if (ids.empty()) throw std::runtime_error("list file is empty: " + path);
  return ids;
}

qdm::Tensor seeded_image(int hw, std::uint64_t seed) {
  qdm::Tensor t(1, hw, hw, 3);
  std::mt19937_64 rng(seed);
  for (float& v : t.data)
    v = static_cast<float>((rng() >> 11) * 0x1.0p-53);
  return t;
}

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : (v[h - 1] + v[h]) / 2.0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"face-detector toolkit: model generation, quantization, "
               "detection, evaluation"};
  app.require_subcommand(1);
  app.fallthrough();  // lets --seed follow the subcommand name
  std::uint64_t seed = 1234;
  app.add_option("--seed", seed, "seed for every random draw");

  int exit_code = 0;
  const Clock::time_point t0 = Clock::now();

  // gen-model
  auto* gen = app.add_subcommand("gen-model", "build and save a seeded model");
  double gen_alpha = 1.0;
  std::string gen_out_strategy = "A", gen_anchors, gen_output;
  int gen_input = 500;
  gen->add_option("--alpha", gen_alpha, "width multiplier in (0,1]");
  gen->add_option("--out", gen_out_strategy, "head strategy")
      ->check(CLI::IsMember({"A", "B", "C"}));
  gen->add_option("--anchors", gen_anchors, "anchor file (w h per line)");
  gen->add_option("--input-size", gen_input, "square build-time input size");
  gen->add_option("--output", gen_output, "model file path")->required();
  gen->callback([&] {
    ordered_json j = new_manifest("gen-model");
    qdm::ModelConfig cfg;
    cfg.alpha = gen_alpha;
    cfg.out = gen_out_strategy == "A"   ? qdm::OutStrategy::A
              : gen_out_strategy == "B" ? qdm::OutStrategy::B
                                        : qdm::OutStrategy::C;
    cfg.input_hw = gen_input;
    if (!gen_anchors.empty()) cfg.anchors = qdm::load_anchors(gen_anchors);
    const ModelGraph g = qdm::build_detector(cfg, seed);
    qdm::save_model(g, gen_output);
    const auto params = qdm::parameter_count(g);
    const StorageFormat fp32{}, fp16{StorageFormat::Kind::fp16, {}, {}};
    StorageFormat q16;
    q16.kind = StorageFormat::Kind::qformat;
    q16.weight_fmt = qdm::make_qformat(6, 9);
    std::printf("params %lld (%.2fM)\n", static_cast<long long>(params),
                static_cast<double>(params) / 1e6);
    std::printf("size fp32 %.2f MB, fp16 %.2f MB, q16 %.2f MB\n",
                qdm::storage_mb(g, fp32), qdm::storage_mb(g, fp16),
                qdm::storage_mb(g, q16));
    j["config"] = {{"alpha", gen_alpha},
                   {"out", gen_out_strategy},
                   {"input", gen_input},
                   {"seed", seed},
                   {"anchors", g.cfg.anchors.size()}};
    j["params"] = params;
    j["size_mb"] = {{"fp32", qdm::storage_mb(g, fp32)},
                    {"fp16", qdm::storage_mb(g, fp16)},
                    {"q16", qdm::storage_mb(g, q16)}};
    j["output"] = gen_output;
    emit_manifest(j, t0);
  });

  // profile
  auto* prof = app.add_subcommand("profile",
                                  "record per-layer activation ranges");
  std::string prof_model, prof_images, prof_list, prof_output;
  prof->add_option("--model", prof_model, "float model file")->required();
  prof->add_option("--images", prof_images, "directory of calibration images");
  prof->add_option("--list", prof_list, "file listing calibration image paths");
  prof->add_option("--output", prof_output, "profile file path")->required();
  prof->callback([&] {
    ordered_json j = new_manifest("profile");
    const ModelGraph g = qdm::load_model(prof_model);
    std::vector<std::string> files;
    if (!prof_images.empty()) files = list_image_files(prof_images);
    if (!prof_list.empty()) {
      const auto more = read_id_list(prof_list);
      files.insert(files.end(), more.begin(), more.end());
    }
    if (files.empty())
      throw std::runtime_error("profile needs --images or --list");
    std::vector<qdm::Tensor> tensors;
    tensors.reserve(files.size());
    for (const std::string& f : files)
      tensors.push_back(qdm::image_to_tensor(qdm::load_image(f)));
    const qdm::ActivationProfile p = qdm::profile_activations(g, tensors);
    qdm::save_profile(p, prof_output);
    double lo = 0, hi = 0;
    for (const qdm::LayerRange& r : p.layers) {
      lo = std::min(lo, r.min_v);
      hi = std::max(hi, r.max_v);
    }
    std::printf("profiled %zu layers over %zu images, range [%g, %g]\n",
                p.layers.size(), files.size(), lo, hi);
    j["config"] = {{"model", prof_model}, {"images", files.size()}};
    j["layers"] = p.layers.size();
    j["range"] = {lo, hi};
    j["output"] = prof_output;
    emit_manifest(j, t0);
  });

  // quantize
  auto* quant = app.add_subcommand("quantize",
                                   "post-training quantization of a model");
  std::string q_model, q_profile, q_output;
  int q_word = 16, q_frac = -1;
  bool q_auto = false;
  quant->add_option("--model", q_model, "float model file")->required();
  quant->add_option("--profile", q_profile, "activation profile")->required();
  quant->add_option("--word-bits", q_word, "storage word width");
  auto* q_auto_flag =
      quant->add_flag("--auto", q_auto, "derive formats from observed ranges");
  quant->add_option("--fractional", q_frac, "force fractional bit count")
      ->excludes(q_auto_flag);
  quant->add_option("--output", q_output, "quantized model path")->required();
  quant->callback([&] {
    ordered_json j = new_manifest("quantize");
    if (!q_auto && q_frac < 0)
      throw CLI::ValidationError("quantize", "pass --auto or --fractional n");
    const ModelGraph g = qdm::load_model(q_model);
    const qdm::ActivationProfile p = qdm::load_profile(q_profile);
    const auto wr = qdm::weight_range(g);
    const qdm::QuantPlan plan =
        q_auto ? qdm::plan_quantization(p, wr, q_word)
               : qdm::plan_forced_fractional(p, wr, q_word, q_frac);
    const ModelGraph qg = qdm::quantize_model(g, plan);
    qdm::save_model(qg, q_output);
    std::printf("weights Q%d.%d, activations Q%d.%d\n", plan.weight_fmt.m,
                plan.weight_fmt.n, plan.activation_fmt.m,
                plan.activation_fmt.n);
    std::printf("size %.2f MB (%d-bit words, %lld params)\n",
                qdm::storage_mb(qg, qg.storage), q_word,
                static_cast<long long>(qdm::parameter_count(qg)));
    j["config"] = {{"model", q_model},
                   {"profile", q_profile},
                   {"word_bits", q_word},
                   {"mode", q_auto ? "auto" : "fractional"}};
    j["weight_fmt"] = {plan.weight_fmt.m, plan.weight_fmt.n};
    j["activation_fmt"] = {plan.activation_fmt.m, plan.activation_fmt.n};
    j["size_mb"] = qdm::storage_mb(qg, qg.storage);
    j["output"] = q_output;
    emit_manifest(j, t0);
  });

  // detect
  auto* det = app.add_subcommand("detect", "multi-scale face detection");
  std::string d_model, d_image, d_list, d_root, d_ext = ".ppm", d_output;
  std::vector<double> d_scales{0.5, 1.0, 2.0};
  double d_score_t = 0.5, d_iou_t = 0.3;
  int d_threads = 1;
  det->add_option("--model", d_model, "model file")->required();
  det->add_option("--image", d_image, "single image path");
  det->add_option("--list", d_list, "file of image ids, one per line");
  det->add_option("--root", d_root, "directory prefix for listed ids");
  det->add_option("--ext", d_ext, "suffix appended to listed ids");
  det->add_option("--scales", d_scales, "pyramid scale factors")
      ->delimiter(',');
  det->add_option("--score-t", d_score_t, "score threshold");
  det->add_option("--iou-t", d_iou_t, "suppression IoU threshold");
  det->add_option("--threads", d_threads, "image-level worker threads")
      ->check(CLI::PositiveNumber);
  det->add_option("--output", d_output, "detection file path")->required();
  det->callback([&] {
    ordered_json j = new_manifest("detect");
    const ModelGraph g = qdm::load_model(d_model);
    std::vector<std::string> ids, paths;
    if (!d_image.empty()) {
      ids.push_back(d_image);
      paths.push_back(d_image);
    }
    if (!d_list.empty()) {
      for (const std::string& id : read_id_list(d_list)) {
        ids.push_back(id);
        std::string p = id + d_ext;
        if (!d_root.empty()) p = d_root + "/" + p;
        paths.push_back(p);
      }
    }
    if (ids.empty()) throw std::runtime_error("detect needs --image or --list");

    enum class St { ok, failed, overflow };
    std::vector<qdm::ImageDetections> results(ids.size());
    std::vector<St> status(ids.size(), St::failed);
    std::vector<std::string> why(ids.size());
    std::atomic<std::size_t> cursor{0};
    auto worker = [&] {
      for (std::size_t i; (i = cursor.fetch_add(1)) < ids.size();) {
        try {
          const qdm::Image img = qdm::load_image(paths[i]);
          results[i].image_id = ids[i];
          results[i].dets = qdm::detect_image(g, qdm::image_to_tensor(img),
                                              d_scales, d_score_t, d_iou_t);
          status[i] = St::ok;
        } catch (const qdm::accumulator_overflow& e) {
          status[i] = St::overflow;
          why[i] = e.what();
        } catch (const std::exception& e) {
          status[i] = St::failed;
          why[i] = e.what();
        }
      }
    };
    const int nthreads =
        std::max(1, std::min<int>(d_threads, static_cast<int>(ids.size())));
    std::vector<std::thread> threads;
    for (int k = 0; k < nthreads - 1; ++k) threads.emplace_back(worker);
    worker();
    for (std::thread& th : threads) th.join();

    // outputs keep input order no matter which worker finished first
    std::vector<qdm::ImageDetections> ordered;
    std::size_t ok = 0, dets_total = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (status[i] == St::overflow) throw qdm::accumulator_overflow();
      if (status[i] == St::failed) {
        std::fprintf(stderr, "warning: skipping %s: %s\n", paths[i].c_str(),
                     why[i].c_str());
        continue;
      }
      ++ok;
      dets_total += results[i].dets.size();
      ordered.push_back(std::move(results[i]));
    }
    if (ok == 0) throw std::runtime_error("all images failed to process");
    qdm::write_detections(ordered, d_output);
    std::printf("%zu/%zu images, %zu detections\n", ok, ids.size(), dets_total);
    j["config"] = {{"model", d_model},     {"storage", storage_name(g.storage)},
                   {"scales", d_scales},   {"score_t", d_score_t},
                   {"iou_t", d_iou_t},     {"threads", d_threads}};
    j["images_ok"] = ok;
    j["images_total"] = ids.size();
    j["detections"] = dets_total;
    j["output"] = d_output;
    emit_manifest(j, t0);
  });

  // eval
  auto* ev = app.add_subcommand("eval", "average precision of a detection file");
  std::string e_dets, e_pr_csv;
  std::vector<std::string> e_annotations;
  double e_iou = 0.5;
  ev->add_option("--dets", e_dets, "detection file")->required();
  ev->add_option("--annotations", e_annotations, "annotation fold file(s)")
      ->required();
  ev->add_option("--iou", e_iou, "match IoU threshold");
  ev->add_option("--pr-csv", e_pr_csv, "write rank,precision,recall CSV");
  ev->callback([&] {
    ordered_json j = new_manifest("eval");
    const auto dets = qdm::read_detections(e_dets);
    std::map<std::string, std::vector<qdm::BBox>> gt_by_id;
    std::map<std::string, int> fold_of;
    std::vector<std::string> fold_names;
    for (std::size_t fi = 0; fi < e_annotations.size(); ++fi) {
      fold_names.push_back(e_annotations[fi]);
      for (const qdm::FddbRecord& rec : qdm::parse_fddb(e_annotations[fi])) {
        auto& boxes = gt_by_id[rec.image_id];
        fold_of[rec.image_id] = static_cast<int>(fi);
        for (const qdm::FddbEllipse& e : rec.faces)
          boxes.push_back(qdm::ellipse_to_box(e));
      }
    }
    std::vector<std::string> unknown;
    for (const qdm::ImageDetections& d : dets)
      if (!gt_by_id.count(d.image_id)) unknown.push_back(d.image_id);
    if (!unknown.empty()) {
      std::string msg = "detection ids missing from annotations:";
      for (const std::string& u : unknown) msg += " " + u;
      throw std::runtime_error(msg);
    }
    std::map<std::string, const qdm::ImageDetections*> det_by_id;
    for (const qdm::ImageDetections& d : dets) det_by_id[d.image_id] = &d;

    std::vector<qdm::MatchResult> per_fold(e_annotations.size());
    qdm::MatchResult overall;
    for (const auto& [id, boxes] : gt_by_id) {
      static const std::vector<qdm::Detection> none;
      const auto it = det_by_id.find(id);
      const qdm::MatchResult m = qdm::match_detections(
          it == det_by_id.end() ? none : it->second->dets, boxes, e_iou);
      per_fold[fold_of[id]] = qdm::merge(per_fold[fold_of[id]], m);
      overall = qdm::merge(overall, m);
    }
    for (std::size_t fi = 0; fi < per_fold.size(); ++fi) {
      const double ap = per_fold[fi].gt_count > 0
                            ? qdm::average_precision(per_fold[fi])
                            : 0.0;
      std::printf("fold %s: AP %.6f over %d faces\n", fold_names[fi].c_str(),
                  ap, per_fold[fi].gt_count);
    }
    const double ap = qdm::average_precision(overall);
    std::printf("AP %.6f\n", ap);
    if (!e_pr_csv.empty()) {
      std::ofstream csv(e_pr_csv);
      if (!csv) throw std::runtime_error("cannot write " + e_pr_csv);
      csv << "rank,precision,recall\n";
      const auto pts = qdm::pr_curve(overall);
      for (std::size_t r = 0; r < pts.size(); ++r)
        csv << (r + 1) << ',' << pts[r].precision << ',' << pts[r].recall
            << '\n';
    }
    j["config"] = {{"dets", e_dets},
                   {"annotations", e_annotations},
                   {"iou", e_iou}};
    j["gt_count"] = overall.gt_count;
    j["detections"] = overall.ranked.size();
    j["ap"] = ap;
    emit_manifest(j, t0);
  });

  // bench
  auto* bench = app.add_subcommand("bench", "float vs fixed latency");
  std::string b_model;
  int b_input = 224, b_iters = 10;
  bench->add_option("--model", b_model, "float model file")->required();
  bench->add_option("--input-size", b_input, "square input extent");
  bench->add_option("--iters", b_iters, "timed iterations per path")
      ->check(CLI::PositiveNumber);
  bench->callback([&] {
    ordered_json j = new_manifest("bench");
    const ModelGraph g = qdm::load_model(b_model);
    if (g.storage.kind == StorageFormat::Kind::qformat)
      throw std::runtime_error("bench needs a float model; it quantizes its "
                               "own 16-bit copy");
    const qdm::Tensor input = seeded_image(b_input, seed);
    const qdm::ActivationProfile p = qdm::profile_activations(g, {input});
    const qdm::QuantPlan plan = qdm::plan_quantization(p, qdm::weight_range(g), 16);
    const ModelGraph qg = qdm::quantize_model(g, plan);
    const qdm::QTensor qinput = qdm::quantize_tensor(input, plan.activation_fmt);

    auto time_runs = [&](auto&& fn) {
      std::vector<double> runs;
      for (int i = 0; i < b_iters; ++i) {
        const Clock::time_point s = Clock::now();
        fn();
        runs.push_back(ms_since(s));
      }
      return runs;
    };
    const std::vector<double> f32 = time_runs([&] { qdm::forward_float(g, input); });
    const std::vector<double> q16 =
        time_runs([&] { qdm::forward_fixed(qg, qinput); });
    const double f32_mean = mean_of(f32), q16_mean = mean_of(q16);
    std::printf("fp32: mean %.2f ms, median %.2f ms, %.2f FPS\n", f32_mean,
                median_of(f32), 1000.0 / f32_mean);
    std::printf("q16 (W Q%d.%d, A Q%d.%d): mean %.2f ms, median %.2f ms, "
                "%.2f FPS\n",
                plan.weight_fmt.m, plan.weight_fmt.n, plan.activation_fmt.m,
                plan.activation_fmt.n, q16_mean, median_of(q16),
                1000.0 / q16_mean);
    std::printf("q16/fp32 latency ratio %.3f\n", q16_mean / f32_mean);
    j["config"] = {{"model", b_model}, {"input", b_input}, {"iters", b_iters}};
    j["fp32_ms"] = {{"mean", f32_mean}, {"median", median_of(f32)}};
    j["q16_ms"] = {{"mean", q16_mean}, {"median", median_of(q16)}};
    j["ratio"] = q16_mean / f32_mean;
    emit_manifest(j, t0);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const qdm::accumulator_overflow& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return exit_code;
}
