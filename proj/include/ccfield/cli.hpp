// Copyright 2026 The ccfield Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// The `ccfield` command line. run_cli() is callable in-process; the tool's
// main() only forwards argv. Usage errors exit 2, runtime errors exit 1.

#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ccfield/common.hpp"
#include "ccfield/compressor.hpp"
#include "ccfield/composer.hpp"
#include "ccfield/gradcheck.hpp"
#include "ccfield/io/dataset.hpp"
#include "ccfield/io/image_io.hpp"
#include "ccfield/io/model_file.hpp"
#include "ccfield/io/scene_file.hpp"
#include "ccfield/io/synthetic.hpp"
#include "ccfield/renderer.hpp"
#include "ccfield/trainer.hpp"

namespace ccfield::cli {

namespace fs = std::filesystem;

struct Resolution {
  int width = 128;
  int height = 128;
};

inline Resolution parse_resolution(const std::string& s) {
  Resolution r;
  char x = 0;
  std::istringstream is(s);
  if (!(is >> r.width >> x >> r.height) || (x != 'x' && x != 'X') || !is.eof() || r.width < 1 || r.height < 1) {
    throw CLI::ValidationError("--res", "expected WxH with positive integers, got '" + s + "'");
  }
  return r;
}

inline std::string fixed(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::string layout_string(const RankLayout& l) {
  std::string s;
  for (int g = 0; g < l.group_count(); ++g) {
    if (g) s += ' ';
    s += "(" + std::to_string(l.groups()[g].vec) + "," + std::to_string(l.groups()[g].mat) + ")";
  }
  return s;
}

// Camera source shared by render and compose.
struct CameraArgs {
  std::string pose_file;
  int orbit = 0;
  std::string res = "128x128";
  double radius = 4.0;
  double elevation = 0.5;
  double fov = 0.6911112;

  void add(CLI::App* app) {
    auto* pose = app->add_option("--pose-file", pose_file, "transforms json whose frames give the cameras");
    auto* orb = app->add_option("--orbit", orbit, "N evenly spaced cameras on a circle around the origin")
                    ->check(CLI::PositiveNumber);
    pose->excludes(orb);
    app->add_option("--res", res, "image size WxH")->capture_default_str();
    app->add_option("--radius", radius, "orbit radius")->capture_default_str();
    app->add_option("--elevation", elevation, "orbit elevation in radians")->capture_default_str();
    app->add_option("--fov", fov, "horizontal field of view in radians")->capture_default_str();
  }

  std::vector<Camera> cameras() const {
    const Resolution r = parse_resolution(res);
    if (!pose_file.empty()) return io::load_poses(pose_file, r.width, r.height);
    return orbit_cameras(orbit > 0 ? orbit : 8, r.width, r.height, fov, radius, elevation);
  }
};

inline void write_render(const fs::path& dir, int index, const std::string& format, const Image& img) {
  char name[32];
  std::snprintf(name, sizeof name, "view_%03d.%s", index, format.c_str());
  io::write_image(dir / name, img);
}

inline std::vector<std::string> split_frames_stem(const std::vector<std::string>& files) {
  std::vector<std::string> out;
  for (const auto& f : files) out.push_back(fs::path(f).stem().string());
  return out;
}

// Model or scene renderer behind --model / --scene.
struct Renderable {
  std::optional<FieldPair<float>> model;
  std::optional<Scene<float>> scene;

  static Renderable load(const std::string& model_path, const std::string& scene_path) {
    Renderable r;
    if (!model_path.empty()) {
      r.model = io::load_model(model_path);
    } else {
      r.scene = io::load_scene(scene_path);
    }
    return r;
  }
  Vec3 background() const { return scene ? scene->background : Vec3::Ones(); }
  Image render(const Camera& cam, RenderOptions opts) const {
    opts.background = background();
    return model ? render_image(*model, cam, opts) : render_scene(*scene, cam, opts);
  }
};

inline int cmd_gen_data(const std::string& spec_path, int views, int test_views, const std::string& res,
                        int truth_res, const std::string& out_dir, std::uint64_t seed, int threads, std::ostream& out) {
  const io::AnalyticScene scene = io::load_analytic_scene(spec_path);
  io::GenerateOptions g;
  g.train_views = views;
  g.test_views = test_views;
  const Resolution r = parse_resolution(res);
  g.width = r.width;
  g.height = r.height;
  g.seed = seed;
  g.truth_res = truth_res;
  g.threads = threads;
  io::generate_dataset(scene, g, out_dir);
  out << "wrote " << views << " train and " << test_views << " test views (" << r.width << "x" << r.height << ") to "
      << out_dir << "\n";
  return 0;
}

struct TrainArgs {
  std::string data, preset_name = "desk", out, residual, curve, init;
  int groups = 0, iters = -1, batch = 0, log_every = 100;
  double l1 = -1.0;
  bool save_optimizer = false;
};

inline int cmd_train(const TrainArgs& a, std::uint64_t seed, int threads, std::ostream& out, std::ostream& err) {
  TrainConfig cfg = preset(a.preset_name);
  if (a.groups > 0) cfg.color_layout = regroup(cfg.color_layout, a.groups);
  if (a.iters >= 0) cfg.iterations = a.iters;
  if (a.batch > 0) cfg.batch = a.batch;
  if (a.l1 >= 0) cfg.l1_density = a.l1;
  if (!a.residual.empty()) cfg.residual = parse_residual_mode(a.residual);
  cfg.seed = seed;
  cfg.threads = threads;

  const io::DatasetSplit train_split = io::load_split(a.data, "train", cfg.render.background);
  if (train_split.aabb) cfg.aabb = *train_split.aabb;
  std::optional<FieldPair<float>> warm;
  if (!a.init.empty()) warm = io::load_model(a.init);

  out << "preset " << a.preset_name << ", " << cfg.iterations << " iterations, batch " << cfg.batch << ", residual "
      << residual_mode_name(cfg.residual) << "\n";
  out << "density " << layout_string(cfg.density_layout) << "  color " << layout_string(cfg.color_layout) << "\n";

  const auto t0 = std::chrono::steady_clock::now();
  const auto result = train<float>(
      TrainingViews{train_split.cameras, train_split.images}, cfg,
      [&](const StepRecord& r) {
        if (a.log_every > 0 && (r.step % a.log_every == 0 || r.step + 1 == cfg.iterations)) {
          out << "step " << r.step << " loss " << fixed(r.loss, 6) << " psnr";
          for (double p : r.group_psnr) out << ' ' << fixed(p);
          out << "\n" << std::flush;
        }
      },
      warm ? &*warm : nullptr);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  io::save_model(a.out, result.model);
  if (a.save_optimizer) io::save_optimizer(fs::path(a.out).string() + ".ccad", result.optimizer);
  const fs::path curve = a.curve.empty() ? fs::path(a.out + ".loss.csv") : fs::path(a.curve);
  {
    std::ofstream os(curve);
    if (!os) throw Error("cannot write " + curve.string());
    os << "step,loss";
    for (int m = 0; m < result.model.prefix_count(); ++m) os << ",psnr_" << m;
    os << "\n";
    os.precision(9);
    for (const auto& r : result.curve) {
      os << r.step << ',' << r.loss;
      for (double p : r.group_psnr) os << ',' << p;
      os << "\n";
    }
  }
  out << "saved " << a.out << " (" << io::model_file_size(result.model) << " bytes)\n";
  err << "trained in " << fixed(secs, 1) << " s\n";
  return 0;
}

inline int cmd_render(const std::string& model, const std::string& scene, const CameraArgs& cams,
                      const std::string& out_dir, const std::string& format, int threads, std::ostream& out) {
  const Renderable r = Renderable::load(model, scene);
  const auto cameras = cams.cameras();
  fs::create_directories(out_dir);
  RenderOptions opts;
  opts.threads = threads;
  for (std::size_t i = 0; i < cameras.size(); ++i) write_render(out_dir, static_cast<int>(i), format, r.render(cameras[i], opts));
  out << "rendered " << cameras.size() << " views to " << out_dir << "\n";
  return 0;
}

inline int cmd_compress(const std::string& model_path, int vec, int mat, std::int64_t budget, const std::string& out_path,
                        const std::string& report, std::ostream& out) {
  const FieldPair<float> model = io::load_model(model_path);
  if (!report.empty()) {
    std::ofstream os(report);
    if (!os) throw Error("cannot write " + report);
    rank_importance(model.color).write_csv(os);
  }
  FieldPair<float> small = model;
  if (budget >= 0) {
    small = compress_to_budget<float>(model, static_cast<std::uint64_t>(budget),
                                      [](const FieldPair<float>& m) { return io::model_file_size(m); });
  } else {
    small.color = sort_and_truncate(model.color, RankCounts{vec, mat});
  }
  io::save_model(out_path, small);
  const RankCounts a = model.color.layout.totals();
  const RankCounts b = small.color.layout.totals();
  out << "color ranks " << a.vec << "/" << a.mat << " -> " << b.vec << "/" << b.mat << " (vec/mat), "
      << io::model_file_size(model) << " -> " << io::model_file_size(small) << " bytes\n";
  return 0;
}

inline int cmd_compose(const std::string& scene_path, const CameraArgs& cams, const std::string& out_dir,
                       const std::string& format, int threads, std::ostream& out) {
  const Scene<float> scene = io::load_scene(scene_path);
  const auto cameras = cams.cameras();
  fs::create_directories(out_dir);
  RenderOptions opts;
  opts.threads = threads;
  opts.background = scene.background;
  for (std::size_t i = 0; i < cameras.size(); ++i) {
    write_render(out_dir, static_cast<int>(i), format, render_scene(scene, cameras[i], opts));
  }
  out << "composed " << scene.instances().size() << " objects (" << io::scene_bytes(scene) << " bytes) into "
      << cameras.size() << " views in " << out_dir << "\n";
  return 0;
}

inline int cmd_eval(const std::string& model, const std::string& scene, const std::string& data,
                    const std::string& split, const std::string& save_dir, int threads, std::ostream& out) {
  const Renderable r = Renderable::load(model, scene);
  const io::DatasetSplit ds = io::load_split(data, split, r.background());
  RenderOptions opts;
  opts.threads = threads;
  if (!save_dir.empty()) fs::create_directories(save_dir);
  const auto names = split_frames_stem(ds.files);
  double total = 0.0;
  for (std::size_t i = 0; i < ds.cameras.size(); ++i) {
    const Image img = r.render(ds.cameras[i], opts);
    const double p = psnr(img, ds.images[i]);
    total += p;
    out << names[i] << "  " << fixed(p) << " dB\n";
    if (!save_dir.empty()) io::write_png(fs::path(save_dir) / (names[i] + ".png"), img);
  }
  out << "mean  " << fixed(total / static_cast<double>(ds.cameras.size())) << " dB\n";
  return 0;
}

inline void print_importance(std::ostream& out, const char* name, const DecomposedField<float>& f) {
  const ImportanceReport rep = rank_importance(f);
  out << name << " rank importance:\n";
  for (std::size_t r = 0; r < rep.vec.size(); ++r) {
    out << "  vec " << r << "  group " << rep.vec_group[r] << "  " << fixed(rep.vec[r], 6) << "\n";
  }
  for (std::size_t r = 0; r < rep.mat.size(); ++r) {
    out << "  mat " << r << "  group " << rep.mat_group[r] << "  " << fixed(rep.mat[r], 6) << "\n";
  }
}

inline int cmd_info(const std::string& path, std::ostream& out) {
  if (fs::path(path).extension() == ".json") {
    const Scene<float> scene = io::load_scene(path);
    out << "scene " << path << "\n";
    for (const auto& inst : scene.instances()) {
      out << "  object " << inst.id << "  density " << layout_string(inst.model->density.layout) << "  color "
          << layout_string(inst.model->color.layout) << "  " << io::model_file_size(*inst.model) << " bytes\n";
    }
    const RankCounts d = scene.total_density_ranks();
    const RankCounts c = scene.total_color_ranks();
    out << "total ranks: density " << d.vec << "/" << d.mat << ", color " << c.vec << "/" << c.mat << " (vec/mat)\n";
    out << "total bytes: " << io::scene_bytes(scene) << "\n";
    return 0;
  }
  const FieldPair<float> m = io::load_model(path);
  const Vec3& lo = m.aabb.min;
  const Vec3& hi = m.aabb.max;
  out << "model " << path << "\n";
  out << "box [" << lo.x() << ", " << lo.y() << ", " << lo.z() << "] - [" << hi.x() << ", " << hi.y() << ", "
      << hi.z() << "]\n";
  out << "grid " << m.color.res.x << "x" << m.color.res.y << "x" << m.color.res.z << ", sh degree "
      << m.shading.sh_degree << "\n";
  out << "density layout " << layout_string(m.density.layout) << "  (" << m.density.parameter_count()
      << " parameters)\n";
  out << "color layout " << layout_string(m.color.layout) << "  (" << m.color.parameter_count() << " parameters)\n";
  out << "groups " << m.color.layout.group_count() << ", dividing ranks";
  for (int g = 1; g <= m.color.layout.group_count(); ++g) {
    const RankCounts p = m.color.layout.prefix(g);
    out << ' ' << p.vec << "/" << p.mat;
  }
  out << "\n";
  if (m.occupancy.enabled()) {
    std::size_t on = 0;
    for (auto c : m.occupancy.cells) on += c != 0;
    out << "occupancy " << m.occupancy.res.x << "x" << m.occupancy.res.y << "x" << m.occupancy.res.z << ", " << on
        << " cells occupied\n";
  } else {
    out << "occupancy none\n";
  }
  out << "file size " << io::model_file_size(m) << " bytes\n";
  print_importance(out, "density", m.density);
  print_importance(out, "color", m.color);
  return 0;
}

// The standard suite plus a scaled-down copy of the preset's first two
// color groups (each count capped at two).
inline int cmd_gradcheck(const std::string& preset_name, std::uint64_t seed, double tol, std::ostream& out) {
  const TrainConfig cfg = preset(preset_name);
  auto scaled = [](const RankLayout& l, int groups) {
    std::vector<RankCounts> g;
    for (int i = 0; i < std::min(groups, l.group_count()); ++i) {
      g.push_back({std::min(l.groups()[i].vec, 2), std::min(l.groups()[i].mat, 2)});
    }
    return RankLayout(std::move(g));
  };
  auto cases = default_gradcheck_cases();
  cases.insert(cases.begin(), GradcheckCase{preset_name + " scaled", scaled(cfg.density_layout, 2),
                                            scaled(cfg.color_layout, 2), cfg.residual, 0});
  GradcheckOptions opt;
  opt.seed = seed;
  opt.sh_degree = cfg.shading.sh_degree;
  opt.l1 = cfg.l1_density;
  bool ok = true;
  for (const auto& c : cases) {
    const GradcheckResult r = gradient_check(c, opt);
    const bool pass = r.max_rel_error < tol;
    ok = ok && pass;
    char line[160];
    std::snprintf(line, sizeof line, "%-28s %6zu params  max rel err %.3e  %s", c.name.c_str(), r.checked,
                  r.max_rel_error, pass ? "PASS" : "FAIL");
    out << line << "\n";
    if (!pass) out << "  worst: " << r.worst << "\n";
  }
  out << (ok ? "all gradients match" : "gradient mismatch") << "\n";
  return ok ? 0 : 1;
}

/// Parses and runs one command. Returns the process exit code.
inline int run_cli(std::vector<std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"ccfield: compressible rank-decomposed radiance fields"};
  app.name("ccfield");
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  int threads = 0;
  auto common = [&](CLI::App* sub, bool stochastic) {
    sub->add_option("--threads", threads, "worker threads (default: CCFIELD_THREADS or all cores)")
        ->check(CLI::NonNegativeNumber);
    if (stochastic) sub->add_option("--seed", seed, "random seed")->capture_default_str();
  };

  auto* gen = app.add_subcommand("gen-data", "render an analytic scene into a train/test dataset");
  std::string spec_path, out_dir, res = "128x128";
  int views = 40, test_views = 8, truth_res = 64;
  gen->add_option("--scene-spec", spec_path, "analytic scene json")->required()->check(CLI::ExistingFile);
  gen->add_option("--views", views, "training views")->capture_default_str()->check(CLI::PositiveNumber);
  gen->add_option("--test-views", test_views, "held-out views")->capture_default_str()->check(CLI::NonNegativeNumber);
  gen->add_option("--res", res, "image size WxH")->capture_default_str();
  gen->add_option("--truth-res", truth_res, "dense ground truth grid (0 to skip)")->capture_default_str();
  gen->add_option("--out", out_dir, "output directory")->required();
  common(gen, true);

  auto* tr = app.add_subcommand("train", "fit a model to a dataset");
  TrainArgs ta;
  tr->add_option("--data", ta.data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  tr->add_option("--preset", ta.preset_name, "settings preset")
      ->capture_default_str()
      ->check(CLI::IsMember({"cp", "hy", "hy-s", "desk"}));
  tr->add_option("--out", ta.out, "output model (.ccnf)")->required();
  tr->add_option("--groups", ta.groups, "merge the color layout into M groups (1 = plain loss)")
      ->check(CLI::PositiveNumber);
  tr->add_option("--iters", ta.iters, "iterations (default from preset)")->check(CLI::NonNegativeNumber);
  tr->add_option("--batch", ta.batch, "rays per step (default from preset)")->check(CLI::PositiveNumber);
  tr->add_option("--residual", ta.residual, "rank-residual mode")
      ->check(CLI::IsMember({"nodetach", "detach", "sequential"}));
  tr->add_option("--l1", ta.l1, "density L1 weight (default from preset)");
  tr->add_option("--curve", ta.curve, "loss curve csv (default: <out>.loss.csv)");
  tr->add_option("--init", ta.init, "warm-start parameters from a model")->check(CLI::ExistingFile);
  tr->add_option("--log-every", ta.log_every, "progress line interval (0: quiet)")->capture_default_str();
  tr->add_flag("--save-optimizer", ta.save_optimizer, "also write Adam moments to <out>.ccad");
  common(tr, true);

  auto* rd = app.add_subcommand("render", "render a model or scene");
  std::string model_path, scene_path, format = "png";
  CameraArgs cams;
  auto* rm = rd->add_option("--model", model_path, "model file")->check(CLI::ExistingFile);
  auto* rs = rd->add_option("--scene", scene_path, "scene json")->check(CLI::ExistingFile);
  rm->excludes(rs);
  rd->add_option("--out", out_dir, "output directory")->required();
  rd->add_option("--format", format, "png or pfm")->capture_default_str()->check(CLI::IsMember({"png", "pfm"}));
  cams.add(rd);
  common(rd, false);

  auto* cp = app.add_subcommand("compress", "truncate color ranks by importance");
  int vec = -1, mat = -1;
  std::int64_t budget = -1;
  std::string report;
  cp->add_option("--model", model_path, "input model")->required()->check(CLI::ExistingFile);
  auto* ov = cp->add_option("--vec", vec, "vector ranks to keep")->check(CLI::NonNegativeNumber);
  auto* om = cp->add_option("--mat", mat, "matrix ranks to keep")->check(CLI::NonNegativeNumber);
  auto* ob = cp->add_option("--budget", budget, "largest file size in bytes")->check(CLI::NonNegativeNumber);
  ov->needs(om);
  om->needs(ov);
  ob->excludes(ov)->excludes(om);
  cp->add_option("--out", out_dir, "output model")->required();
  cp->add_option("--report", report, "write per-rank importance csv");

  auto* co = app.add_subcommand("compose", "render a multi-object scene");
  co->add_option("--scene", scene_path, "scene json")->required()->check(CLI::ExistingFile);
  co->add_option("--out", out_dir, "output directory")->required();
  co->add_option("--format", format, "png or pfm")->capture_default_str()->check(CLI::IsMember({"png", "pfm"}));
  cams.add(co);
  common(co, false);

  auto* ev = app.add_subcommand("eval", "PSNR of a model or scene against a dataset split");
  std::string data, split = "test", save_dir;
  auto* em = ev->add_option("--model", model_path, "model file")->check(CLI::ExistingFile);
  auto* es = ev->add_option("--scene", scene_path, "scene json")->check(CLI::ExistingFile);
  em->excludes(es);
  ev->add_option("--data", data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--split", split, "split name")->capture_default_str();
  ev->add_option("--save", save_dir, "also write the renders here");
  common(ev, false);

  auto* in = app.add_subcommand("info", "describe a model or scene");
  std::string info_path;
  in->add_option("file", info_path, "model (.ccnf) or scene (.json)")->required()->check(CLI::ExistingFile);

  auto* gc = app.add_subcommand("gradcheck", "compare analytic gradients with finite differences");
  std::string gc_preset = "desk";
  double tol = 1e-4;
  gc->add_option("--preset", gc_preset, "preset whose layout is scaled into the suite")
      ->capture_default_str()
      ->check(CLI::IsMember({"cp", "hy", "hy-s", "desk"}));
  gc->add_option("--tol", tol, "relative error bound")->capture_default_str();
  common(gc, true);

  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    err << "run 'ccfield --help' or 'ccfield <verb> --help' for usage\n";
    return 2;
  }

  try {
    if (*gen) return cmd_gen_data(spec_path, views, test_views, res, truth_res, out_dir, seed, threads, out);
    if (*tr) return cmd_train(ta, seed, threads, out, err);
    if (*rd) {
      if (model_path.empty() && scene_path.empty()) throw CLI::RequiredError("--model or --scene");
      return cmd_render(model_path, scene_path, cams, out_dir, format, threads, out);
    }
    if (*cp) {
      if (budget < 0 && vec < 0) throw CLI::RequiredError("--vec/--mat or --budget");
      return cmd_compress(model_path, vec, mat, budget, out_dir, report, out);
    }
    if (*co) return cmd_compose(scene_path, cams, out_dir, format, threads, out);
    if (*ev) {
      if (model_path.empty() && scene_path.empty()) throw CLI::RequiredError("--model or --scene");
      return cmd_eval(model_path, scene_path, data, split, save_dir, threads, out);
    }
    if (*in) return cmd_info(info_path, out);
    if (*gc) return cmd_gradcheck(gc_preset, seed, tol, out);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

inline int run_cli(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return run_cli(std::vector<std::string>(argv + 1, argv + argc), out, err);
}

}  // namespace ccfield::cli
