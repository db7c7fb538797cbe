// bico: pose estimation from oriented correspondences, pose metrics and
// synthetic sweeps.
//
// Exit codes: 0 ok, 2 input error (files, flags, config), 3 computation failure.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>

#include "bico/bico.hpp"

namespace fs = std::filesystem;
using namespace bico;

namespace {

// Failures caught at the top level and turned into an exit code.
struct Exit {
  int code;
  std::string message;
};

[[noreturn]] void input_error(const std::string& msg) { throw Exit{2, msg}; }

nlohmann::json read_json(const std::string& path) {
  auto in = detail::open_input(path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::ParseError, path + ": " + e.what());
  }
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write '" + path + "'");
  out << text;
  if (!out) throw Error(ErrorCode::Io, "write failed for '" + path + "'");
}

// A model given as an oriented PLY cloud is used as is; a mesh (OBJ, or PLY
// with faces and no normals) is sampled.
OrientedCloud load_model(const std::string& path, std::size_t samples, std::uint64_t seed) {
  if (detail::has_suffix(path, ".ply")) {
    auto in = detail::open_input(path);
    auto data = detail::read_ply(in, path);
    if (data.faces.empty()) {
      std::ifstream again(path);
      return read_cloud_ply(again, path, Frame::model);
    }
    TriangleMesh mesh{std::move(data.positions), {}};
    for (const auto& f : data.faces) detail::fan_triangulate(f, mesh);
    return sample_surface(mesh, samples, seed);
  }
  return sample_surface(load_mesh(path), samples, seed);
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---------------------------------------------------------------------------

struct EstimateArgs {
  std::string scene, model, bcm_s, bcm_m, pr, out, diagnostics;
  std::size_t z = 100;
  double keep = 0.10;
  std::uint64_t seed = 0;
  std::size_t model_points = 1000;
};

int run_estimate(const EstimateArgs& a, unsigned threads) {
  if (a.bcm_s.empty() && a.bcm_m.empty() && a.pr.empty())
    input_error("estimate: need at least one of --bcm-s, --bcm-m, --pr");
  auto scene = read_cloud_ply(a.scene, Frame::camera);
  auto model = load_model(a.model, a.model_points, a.seed);
  std::optional<CorrespondenceSet> s, m;
  std::optional<PoseSet> pr;
  if (!a.bcm_s.empty()) s = read_correspondences(a.bcm_s);
  if (!a.bcm_m.empty()) m = read_correspondences(a.bcm_m);
  if (!a.pr.empty()) pr = pose_set_from_json(read_json(a.pr));

  SolveOptions opt{a.z, a.keep, a.seed, threads};
  SolveResult res;
  try {
    res = solve(scene, model, s, m, pr, opt);
  } catch (const Error& e) {
    // Inconsistent inputs are the caller's fault; everything else is a solver failure.
    if (e.is_input_error()) throw;
    throw Exit{3, e.what()};
  }
  for (const auto& w : res.warnings) std::cerr << "warning: " << w << '\n';
  write_text(a.out, pose_to_json(res.pose).dump(2) + "\n");
  if (!a.diagnostics.empty()) write_text(a.diagnostics, res.diagnostics.dump(2) + "\n");
  return 0;
}

// ---------------------------------------------------------------------------

struct MetricsArgs {
  std::string pred, gt, model;
  std::optional<double> threshold;
  double diam_frac = 0.10;
  bool symmetric = false;
  std::size_t model_points = 1000;
  std::uint64_t seed = 0;
};

int run_metrics(const MetricsArgs& a) {
  auto pred = pose_from_json(read_json(a.pred));
  auto gt = pose_from_json(read_json(a.gt));
  auto pts = load_model(a.model, a.model_points, a.seed).positions();
  double thr = a.threshold ? *a.threshold : a.diam_frac * diameter(pts);
  if (!(thr > 0)) input_error("metrics: threshold must be > 0");
  double e_add = add(pred, gt, pts), e_adds = adds(pred, gt, pts);
  double e = a.symmetric ? e_adds : e_add;
  std::cout << "add_m,adds_m,rot_deg,trans_m,threshold_m,pass\n"
            << format_double(e_add) << ',' << format_double(e_adds) << ','
            << format_double(rotation_error_deg(pred, gt)) << ',' << format_double(translation_error(pred, gt))
            << ',' << format_double(thr) << ',' << (e < thr ? "pass" : "fail") << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

struct SweepArgs {
  std::string config, out_dir;
  std::optional<std::size_t> scenes;
};

void print_table(const Report& r) {
  std::printf("%-14s %-16s %9s %9s %10s %12s %12s %8s\n", to_string(r.config.variable), "method", "ADD acc%",
              "ADD-S acc%", "ADD-S AUC", "med ADD cm", "med trans cm", "failed");
  for (const auto& c : r.cells)
    for (const auto& m : c.methods)
      std::printf("%-14g %-16s %9.1f %9.1f %10.2f %12.3f %12.3f %8zu\n", c.value, to_string(m.method),
                  m.add_accuracy, m.adds_accuracy, m.adds_auc, 100.0 * m.add_median, 100.0 * m.trans_median,
                  m.failures);
}

int run_sweep_cmd(const SweepArgs& a, unsigned threads) {
  SweepConfig cfg = load_sweep_config(a.config);
  if (a.scenes) {
    cfg.scenes_per_value = *a.scenes;
    cfg.validate();
  }
  auto start = std::chrono::steady_clock::now();
  Report report = run_sweep(cfg, threads);
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  std::error_code ec;
  fs::create_directories(a.out_dir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create '" + a.out_dir + "': " + ec.message());
  std::ostringstream csv;
  write_report_csv(csv, report);
  write_text((fs::path(a.out_dir) / "report.csv").string(), csv.str());
  write_text((fs::path(a.out_dir) / "aggregates.json").string(), report_aggregates_json(report).dump(2) + "\n");

  print_table(report);
  std::printf("%zu scenes x %zu values in %.1f s; wrote %s/report.csv and aggregates.json\n", cfg.scenes_per_value,
              cfg.values.size(), secs, a.out_dir.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// Quick invariant checks; the full suite lives in the test binaries.

int run_selftest(unsigned threads) {
  int failed = 0;
  auto check = [&](const std::string& name, bool ok, const std::string& detail) {
    std::printf("%s  %-40s %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
    failed += !ok;
  };

  Rng rng(2024);
  auto rand_unit = [&] { return detail::random_unit_vector(rng); };
  auto rand_point = [&] { return Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)); };

  double worst = 0;
  for (int k = 0; k < 100000; ++k) {
    OrientedPoint p{rand_point(), rand_unit()};
    auto t = align_to_x(p);
    worst = std::max({worst, apply_point(t, p.position).norm(), (t.rotation * p.normal - Vec3::UnitX()).norm()});
  }
  check("align_to_x postconditions", worst <= 1e-11, fmt("max %.2e", worst));

  worst = 0;
  int used = 0;
  for (int k = 0; k < 10000; ++k) {
    RigidTransform truth{Rotation::from_quaternion(random_unit_quaternion(rng)), rand_point()};
    OrientedPoint src{rand_point(), rand_unit()};
    Vec3 other = rand_point();
    RigidTransform pose;
    try {
      pose = pair_pose(src, other, {apply_point(truth, src.position), apply_normal(truth, src.normal)},
                       apply_point(truth, other));
    } catch (const Error&) {
      continue;
    }
    ++used;
    worst = std::max({worst, geodesic_angle(pose.rotation, truth.rotation),
                      (pose.translation - truth.translation).norm()});
  }
  check("pair_pose exact recovery", worst <= 1e-9 && used > 9900, fmt("max %.2e", worst));

  bool bound = true;
  for (int k = 0; k < 200; ++k) {
    std::vector<Vec3> pts;
    for (int i = 0; i < 50; ++i) pts.push_back(0.05 * rand_point());
    RigidTransform p{Rotation::from_quaternion(random_unit_quaternion(rng)), 0.01 * rand_point()};
    RigidTransform g{Rotation::from_quaternion(random_unit_quaternion(rng)), 0.01 * rand_point()};
    bound &= adds(p, g, pts) <= add(p, g, pts);
  }
  check("adds <= add", bound, "200 instances");
  std::vector<double> zeros(10, 0.0);
  check("AUC of zero errors", auc(zeros) == 100.0, fmt("%.17g", auc(zeros)));
  OrientedCloud a{Frame::model, {{Vec3::Zero(), Vec3::UnitX()}}}, b{Frame::model, {{Vec3::Zero(), -Vec3::UnitX()}}};
  check("bcm_loss flipped normals", bcm_loss(a, b, 0.05) == 0.1, fmt("%.17g", bcm_loss(a, b, 0.05)));

  SweepConfig sweep;
  sweep.base.M = sweep.base.N = 200;
  sweep.base.Z = 20;
  sweep.base.corr_noise_sigma = 0;
  sweep.values = {0.0, 0.5};
  sweep.scenes_per_value = 2;
  sweep.ransac_iterations = 20;
  auto r1 = run_sweep(sweep, 1), rn = run_sweep(sweep, threads == 0 ? 0 : std::max(2u, threads));
  std::ostringstream c1, cn;
  write_report_csv(c1, r1);
  write_report_csv(cn, rn);
  check("sweep determinism across threads", c1.str() == cn.str(), "");
  check("noiseless solve is exact", r1.aggregate(1, Method::bico).add_mean < 1e-9,
        fmt("mean ADD %.2e m", r1.aggregate(1, Method::bico).add_mean));

  std::printf("%d check(s) failed\n", failed);
  return failed ? 3 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bico: pose estimation from oriented point-pair correspondences"};
  app.require_subcommand(1, 1);
  unsigned threads = 1;
  app.add_option("--threads", threads, "worker threads (0 = all cores)")->capture_default_str();

  EstimateArgs est;
  auto* estimate = app.add_subcommand("estimate", "estimate a model->camera pose from correspondence files");
  estimate->add_option("--scene", est.scene, "scene cloud, ASCII PLY with normals (camera frame, m)")->required();
  estimate->add_option("--model", est.model, "model mesh (OBJ/PLY) or oriented PLY cloud (m)")->required();
  estimate->add_option("--bcm-s", est.bcm_s, "scene->model correspondence CSV");
  estimate->add_option("--bcm-m", est.bcm_m, "model->scene correspondence CSV");
  estimate->add_option("--pr", est.pr, "regressed poses JSON (object, array or {\"poses\": [...]})");
  estimate->add_option("--z", est.z, "FPS points per branch")->capture_default_str();
  estimate->add_option("--keep", est.keep, "fraction of lowest-error candidates kept")->capture_default_str();
  estimate->add_option("--seed", est.seed, "seed")->capture_default_str();
  estimate->add_option("--model-points", est.model_points, "samples when --model is a mesh")->capture_default_str();
  estimate->add_option("--out", est.out, "pose JSON path (default stdout)");
  estimate->add_option("--diagnostics", est.diagnostics, "diagnostics JSON path");

  MetricsArgs met;
  auto* metrics = app.add_subcommand("metrics", "ADD / ADD-S / rotation / translation error of a pose");
  metrics->add_option("--pred", met.pred, "predicted pose JSON")->required();
  metrics->add_option("--gt", met.gt, "ground-truth pose JSON")->required();
  metrics->add_option("--model", met.model, "model mesh (OBJ/PLY) or oriented PLY cloud")->required();
  auto* thr = metrics->add_option("--threshold", met.threshold, "pass threshold in m");
  metrics->add_option("--diam-frac", met.diam_frac, "pass threshold as a fraction of the model diameter")
      ->capture_default_str()
      ->excludes(thr);
  metrics->add_flag("--symmetric", met.symmetric, "judge pass/fail on ADD-S instead of ADD");
  metrics->add_option("--model-points", met.model_points, "samples when --model is a mesh")->capture_default_str();
  metrics->add_option("--seed", met.seed, "sampling seed when --model is a mesh")->capture_default_str();

  SweepArgs sw;
  auto* sweep = app.add_subcommand("sweep", "run a synthetic sweep from a config file");
  sweep->add_option("--config", sw.config, "JSON or key = value config")->required();
  sweep->add_option("--out-dir", sw.out_dir, "directory for report.csv and aggregates.json")->required();
  sweep->add_option("--scenes", sw.scenes, "override scenes_per_value");

  auto* selftest = app.add_subcommand("selftest", "run quick invariant checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    for (auto& ch : msg)
      if (ch == '\n') ch = ' ';
    std::cerr << "error: InvalidArgument: " << msg << '\n';
    return 2;
  }

  try {
    if (*estimate) return run_estimate(est, threads);
    if (*metrics) return run_metrics(met);
    if (*sweep) return run_sweep_cmd(sw, threads);
    if (*selftest) return run_selftest(threads);
  } catch (const Exit& e) {
    std::cerr << "error: " << e.message << '\n';
    return e.code;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.is_input_error() || e.code() == ErrorCode::EmptyCloud || e.code() == ErrorCode::EmptyInput ? 2 : 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
