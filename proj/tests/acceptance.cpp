// Copyright 2026 The handteleop Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fail.

#include <sys/wait.h>

#include <algorithm>
#include <array>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "handteleop/dataset.hpp"
#include "handteleop/image.hpp"
#include "handteleop/pose_stream.hpp"
#include "handteleop/retarget.hpp"
#include "handteleop/shading_mlp.hpp"
#include "handteleop/tactile.hpp"
#include "handteleop/tactile_render.hpp"
#include "test_support.hpp"

using namespace handteleop;
using namespace handteleop::testing;
using namespace handteleop::tactile;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[96];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Outcome self_target_recovery() {
  const HandModel m = default_model();
  Xoshiro256 rng(1001);
  const auto t0 = std::chrono::steady_clock::now();
  double worst_obj = 0.0, worst_dq = 0.0;
  for (int i = 0; i < 100; ++i) {
    const JointConfig q = random_config(m, rng);
    const SolveResult r = retarget_step(m, task_space_vectors(forward_kinematics(m, q)), q, {});
    worst_obj = std::max(worst_obj, r.objective);
    worst_dq = std::max(worst_dq, (r.q - q).cwiseAbs().maxCoeff());
  }
  const double secs = seconds_since(t0);
  return {worst_obj <= 1e-8 && worst_dq <= 1e-6 && secs <= 10.0,
          "max objective " + fmt("%.3g", worst_obj) + ", max |dq| " + fmt("%.3g", worst_dq) + " rad, " +
              fmt("%.3f", secs) + " s"};
}

Outcome oracle_equivalence() {
  const HandModel m = planar_two_link_model();
  Xoshiro256 rng(1002);
  RetargetParams params;
  params.alpha = 1e-3;
  double worst = 0.0;
  int bound_active = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const double a = rng.uniform(kPlanarLo - 0.4, kPlanarHi + 0.4), b = rng.uniform(kPlanarLo - 0.4, kPlanarHi + 0.4);
    auto target = planar_positions(a, b);
    for (auto& p : target)
      for (auto& c : p) c += rng.uniform(-0.002, 0.002);
    JointConfig q_prev(2);
    q_prev << std::clamp(a + rng.uniform(-0.05, 0.05), kPlanarLo, kPlanarHi),
        std::clamp(b + rng.uniform(-0.05, 0.05), kPlanarLo, kPlanarHi);
    std::array<Vec3, 4> tp;
    for (std::size_t i = 0; i < 4; ++i) tp[i] = Vec3(target[i][0], target[i][1], 0.0);
    const SolveResult r = retarget_step(m, TsvSet::from_positions(tp), q_prev, params);
    const GridMinimum g = planar_grid_search(target, q_prev[0], q_prev[1], params.alpha);
    worst = std::max({worst, std::abs(r.q[0] - g.a), std::abs(r.q[1] - g.b)});
    bound_active += r.q[0] == kPlanarLo || r.q[0] == kPlanarHi || r.q[1] == kPlanarLo || r.q[1] == kPlanarHi;
  }
  return {worst <= 2e-3 && bound_active > 0,
          "max |q - q_grid| " + fmt("%.3g", worst) + " rad over 20 targets, " + std::to_string(bound_active) +
              " bound-active"};
}

Outcome gradient_correctness() {
  const HandModel m = default_model();
  Xoshiro256 rng(1003);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    RetargetParams params;
    params.alpha = rng.uniform(0.0, 0.1);
    const JointConfig q = random_config(m, rng), q_prev = random_config(m, rng);
    const TsvSet h = random_tsv(rng);
    const Eigen::VectorXd g = eval_gradient(m, q, h, q_prev, params);
    const Eigen::VectorXd fd = fd_gradient(m, q, h, q_prev, params);
    worst = std::max(worst, (g - fd).norm() / std::max(fd.norm(), 1e-12));
  }
  return {worst <= 1e-4, "max relative error " + fmt("%.3g", worst) + " over 100 instances"};
}

Outcome realtime_budget() {
  const HandModel m = default_model();
  Xoshiro256 rng(1004);
  const PoseStream s = synthetic_stream(m, 1000, rng);
  const ReplayResult r = replay(m, s, {});
  return {r.stats.records == 1000 && r.stats.p95_solve_micros <= 8000.0,
          "p95 " + fmt("%.0f", r.stats.p95_solve_micros) + " us, max " + fmt("%.0f", r.stats.max_solve_micros) +
              " us over 1000 records (budget 8000 us)"};
}

Outcome translation_invariance() {
  const HandModel m = default_model();
  Xoshiro256 rng(1005);
  const PoseStream base = parse_pose_stream(to_text(synthetic_stream(m, 300, rng)));
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 5; ++trial) {
    // Random shift, snapped to the ingestion grid so it survives parsing unchanged.
    const Vec3 shift = quantize_position(Vec3(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)));
    PoseStream moved = base;
    for (auto& rec : moved)
      for (auto& p : rec.poses) p.position += shift;
    moved = parse_pose_stream(to_text(moved));
    const auto a = replay(m, base, {}).trajectory, b = replay(m, moved, {}).trajectory;
    for (std::size_t i = 0; i < a.size(); ++i)
      mismatches += a[i].q != b[i].q || std::bit_cast<std::uint64_t>(a[i].objective) !=
                                            std::bit_cast<std::uint64_t>(b[i].objective);
  }
  return {mismatches == 0, std::to_string(mismatches) + " differing records over 5 shifts x 300 records"};
}

ContactScene random_scene(Xoshiro256& rng, const GelSpec& gel) {
  ContactScene s{gel, {}};
  const int count = 1 + static_cast<int>(rng.below(3));
  for (int i = 0; i < count; ++i) {
    const double x = rng.uniform(-0.4, 0.4) * gel.width, y = rng.uniform(-0.4, 0.4) * gel.height;
    const Quat q(Eigen::AngleAxisd(rng.uniform(0, 3), Vec3(rng.normal(), rng.normal(), rng.normal()).normalized()));
    const Pose pose = Pose::from_wxyz(Vec3(x, y, 0), q.w(), q.x(), q.y(), q.z());
    const double depth = rng.uniform(0.0002, 0.0015);
    switch (rng.below(3)) {
      case 0: s.primitives.push_back({Sphere{rng.uniform(0.002, 0.006)}, pose, depth}); break;
      case 1:
        s.primitives.push_back(
            {Box{rng.uniform(0.002, 0.006), rng.uniform(0.002, 0.006), rng.uniform(0.002, 0.006)}, pose, depth});
        break;
      default: s.primitives.push_back({Cylinder{rng.uniform(0.001, 0.004), rng.uniform(0.002, 0.006)}, pose, depth});
    }
  }
  return s;
}

// For each scene: copy the (n, v) of random source pixels onto random target
// pixels, shade, and require equal intensities at every copied pair. Also
// shade each pixel in isolation and require it to match the full-map result.
Outcome shadowlessness(const ShadingMlp& mlp) {
  Xoshiro256 rng(1006);
  const GelSpec gel{0.02, 0.015, 160, 120};
  const PipelineParams pp;
  std::size_t pairs = 0, bad = 0;
  for (int scene_i = 0; scene_i < 10; ++scene_i) {
    const ContactScene scene = random_scene(rng, gel);
    NormalMap nm = scene_normals(scene, pp);
    ViewMap vm = view_map(gel, pp.camera_height);
    std::vector<std::array<std::size_t, 4>> copies;
    for (int k = 0; k < 2000; ++k) {
      const std::size_t sr = rng.below(gel.res_y), sc = rng.below(gel.res_x);
      const std::size_t dr = rng.below(gel.res_y), dc = rng.below(gel.res_x);
      if (sr == dr && sc == dc) continue;
      nm(dr, dc) = nm(sr, sc);
      vm(dr, dc) = vm(sr, sc);
      copies.push_back({sr, sc, dr, dc});
    }
    const TactileImage a = shade_analytic(nm, vm, pp.shading);
    const TactileImage b = shade_mlp(nm, vm, mlp);
    // Later copies may overwrite earlier sources, so compare against the final maps.
    for (const auto& [sr, sc, dr, dc] : copies) {
      if (nm(sr, sc) != nm(dr, dc) || vm(sr, sc) != vm(dr, dc)) continue;
      ++pairs;
      bad += a(sr, sc) != a(dr, dc);
      bad += b(sr, sc) != b(dr, dc);
    }
    for (int k = 0; k < 200; ++k) {
      const std::size_t r = rng.below(gel.res_y), c = rng.below(gel.res_x);
      const NormalMap n1(1, 1, nm(r, c));
      const ViewMap v1(1, 1, vm(r, c));
      bad += shade_analytic(n1, v1, pp.shading)(0, 0) != a(r, c);
      bad += shade_mlp(n1, v1, mlp)(0, 0) != b(r, c);
    }
  }
  return {bad == 0 && pairs > 10000,
          std::to_string(bad) + " mismatches over " + std::to_string(pairs) +
              " duplicated pairs and 2000 isolated pixels, 10 scenes, analytic + mlp"};
}

Outcome sphere_press() {
  const GelSpec gel;  // default 640 x 480
  const double r = 0.005, d = 0.001;
  const auto hm = render_heightmap({gel, {Primitive{Sphere{r}, Pose::from_position(Vec3(0, 0, r)), d}}});
  double radius = 0.0;
  for (std::size_t row = 0; row < gel.res_y; ++row)
    for (std::size_t col = 0; col < gel.res_x; ++col) {
      // Pixel centers from the gel geometry, independent of GelSpec::x_at.
      const double x = (col + 0.5) * gel.width / gel.res_x - 0.5 * gel.width;
      const double y = (row + 0.5) * gel.height / gel.res_y - 0.5 * gel.height;
      if (hm(row, col) > 0.0) radius = std::max(radius, std::hypot(x, y));
    }
  const double expect = std::sqrt(r * r - (r - d) * (r - d));
  const double pitch = std::max(gel.width / gel.res_x, gel.height / gel.res_y);
  return {std::abs(radius - expect) <= pitch,
          "contact radius " + fmt("%.4f", radius * 1e3) + " mm vs " + fmt("%.4f", expect * 1e3) + " mm (pitch " +
              fmt("%.4f", pitch * 1e3) + " mm)"};
}

Outcome mlp_fit(std::optional<ShadingMlp>& trained) {
  const ShadingParams oracle;
  TrainParams tp;
  tp.seed = 2024;
  const auto t0 = std::chrono::steady_clock::now();
  const TrainReport a = train_shading_mlp(oracle, tp);
  const double secs = seconds_since(t0);
  const TrainReport b = train_shading_mlp(oracle, tp);
  trained = a.mlp;
  const bool same = a.mlp == b.mlp && a.holdout_rmse == b.holdout_rmse;

  // Cross-check on a rendered press: analytic and MLP images stay close.
  const ContactScene scene{GelSpec{0.02, 0.015, 320, 240},
                           {Primitive{Sphere{0.005}, Pose::from_position(Vec3(0, 0, 0.005)), 0.001}}};
  const auto ia = render(scene, {}, ShadeMode::kAnalytic), ib = render(scene, {}, ShadeMode::kMlp, &a.mlp);
  double mad = 0.0;
  for (std::size_t i = 0; i < ia.pixels().size(); ++i) mad += std::abs(int(ia.pixels()[i]) - int(ib.pixels()[i]));
  mad /= static_cast<double>(ia.pixels().size());

  return {a.holdout_psnr >= 30.0 && secs <= 300.0 && same,
          "holdout PSNR " + fmt("%.2f", a.holdout_psnr) + " dB, train " + fmt("%.1f", secs) + " s, deterministic " +
              (same ? "yes" : "no") + ", sphere image mean |analytic - mlp| " + fmt("%.3f", mad) + " / 255"};
}

bool all_zero(const Image8& img) {
  return std::all_of(img.pixels().begin(), img.pixels().end(), [](std::uint8_t v) { return v == 0; });
}

Outcome preprocessing() {
  Xoshiro256 rng(1008);
  std::vector<std::string> notes;
  bool ok = true;

  // Tile: four 640x480 images with distinct pixel ids; every output pixel maps back once.
  std::array<Image8, 4> imgs;
  for (int k = 0; k < 4; ++k) {
    imgs[k] = Image8(640, 480);
    for (auto& v : imgs[k].pixels()) v = static_cast<std::uint8_t>(rng.below(256));
  }
  const Image8 tile = tile_super_image(std::span<const Image8>(imgs));
  bool tile_ok = tile.width() == 1280 && tile.height() == 960;
  if (tile_ok) {
    std::vector<std::uint8_t> seen(4 * 640 * 480, 0);
    for (std::size_t r = 0; r < 960; ++r)
      for (std::size_t c = 0; c < 1280; ++c) {
        const std::size_t k = (r / 480) * 2 + c / 640, rr = r % 480, cc = c % 640;
        tile_ok &= tile(r, c) == imgs[k](rr, cc);
        ++seen[(k * 480 + rr) * 640 + cc];
      }
    tile_ok &= std::all_of(seen.begin(), seen.end(), [](std::uint8_t v) { return v == 1; });
  }
  ok &= tile_ok;
  notes.push_back(std::string("tile 1280x960 bijective ") + (tile_ok ? "yes" : "no"));

  // Dropout rate over 10000 samples.
  SampleBatch batch(10000);
  for (auto& item : batch) {
    item.global_img = Image8(4, 3, 200);
    item.wrist_img = Image8(4, 3, 100);
  }
  const auto dropped = vision_dropout(batch, 0.3, 77);
  std::size_t zeroed = 0;
  for (const auto& item : dropped.batch) zeroed += all_zero(item.global_img) && all_zero(item.wrist_img);
  const double frac = static_cast<double>(zeroed) / 10000.0;
  ok &= frac >= 0.28 && frac <= 0.32 && zeroed == dropped.dropped;
  notes.push_back("dropout p=0.3 fraction " + fmt("%.4f", frac));

  // p = 0 is a bit-exact identity.
  for (auto& item : batch)
    for (auto& v : item.global_img.pixels()) v = static_cast<std::uint8_t>(rng.below(256));
  const auto same = vision_dropout(batch, 0.0, 77);
  bool ident = same.dropped == 0;
  for (std::size_t i = 0; i < batch.size(); ++i)
    ident &= same.batch[i].global_img == batch[i].global_img && same.batch[i].wrist_img == batch[i].wrist_img;
  ok &= ident;
  notes.push_back(std::string("p=0 identity ") + (ident ? "yes" : "no"));

  const Image8 small = resize_image(tile, 480, 320);
  const bool dims = small.width() == 480 && small.height() == 320;
  ok &= dims;
  notes.push_back("resize " + std::to_string(small.height()) + "x" + std::to_string(small.width()));

  std::string detail;
  for (const auto& n : notes) detail += (detail.empty() ? "" : ", ") + n;
  return {ok, detail};
}

int run_cli(const std::string& args, const fs::path& dir) {
  const std::string cmd =
      std::string(HANDTELEOP_CLI) + " " + args + " >" + (dir / "out.txt").string() + " 2>" + (dir / "err.txt").string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

Outcome cli_round_trips() {
  const fs::path dir = fs::temp_directory_path() / "handteleop_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto p = [&](const char* n) { return (dir / n).string(); };
  std::vector<std::string> fails;

  // Stream written by the test harness, not by the CLI.
  Xoshiro256 rng(1009);
  const HandModel m = default_model();
  std::ofstream(p("stream.jsonl")) << to_text(synthetic_stream(m, 500, rng));
  if (run_cli("retarget replay --stream " + p("stream.jsonl") + " --out " + p("traj.csv") + " --stats-json " +
                  p("stats.json"),
              dir) != 0)
    fails.push_back("replay exit");
  double delta = INFINITY;
  try {
    const JointTrajectory traj = parse_trajectory_csv(slurp(p("traj.csv")));
    const auto stats = nlohmann::json::parse(slurp(p("stats.json")));
    // Recompute the mean objective by hand from the CSV rows.
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& rec : traj)
      if (std::isfinite(rec.objective)) sum += rec.objective, ++n;
    delta = std::abs(sum / static_cast<double>(n) - stats["mean_objective"].get<double>());
    if (traj.size() != 500 || stats["records"] != 500) fails.push_back("record count");
    if (delta > 1e-12) fails.push_back("mean objective");
  } catch (const std::exception& e) {
    fails.push_back(std::string("round trip: ") + e.what());
  }

  std::ofstream(p("bad.jsonl")) << "{\"t\":0,\"frames\":{\"palm\":{\"p\":[0,0],\"q\":[1,0,0,0]}}}\n";
  std::ofstream(p("scene.json")) << "{\"primitives\":[{\"shape\":\"torus\"}]}";
  const std::vector<std::pair<std::string, int>> cases = {
      {"retarget replay --stream " + p("bad.jsonl") + " --out " + p("x.csv"), 2},
      {"retarget replay --stream " + p("nope.jsonl") + " --out " + p("x.csv"), 2},
      {"retarget replay --stream " + p("stream.jsonl") + " --alpha -1 --out " + p("x.csv"), 2},
      {"retarget replay --stream " + p("stream.jsonl") + " --max-iters 1 --max-nonconverged 0 --out " + p("x.csv"), 3},
      {"tactile render --scene " + p("scene.json") + " --out " + p("x.pgm"), 2},
      {"data resize --in " + p("scene.json") + " --out " + p("x.pgm"), 2},
      {"no-such-command", 2},
  };
  int codes_ok = 0;
  for (const auto& [args, want] : cases) {
    const int got = run_cli(args, dir);
    if (got == want) ++codes_ok;
    else fails.push_back("'" + args.substr(0, args.find(' ', 9)) + "' exit " + std::to_string(got));
  }
  fs::remove_all(dir);
  std::string detail = "mean objective delta " + fmt("%.3g", delta) + ", exit codes " + std::to_string(codes_ok) +
                       "/" + std::to_string(cases.size());
  for (const auto& f : fails) detail += "; " + f;
  return {fails.empty(), detail};
}

}  // namespace

int main() {
  std::optional<ShadingMlp> mlp;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"self-target recovery", self_target_recovery},
      {"oracle equivalence (planar grid search)", oracle_equivalence},
      {"gradient correctness", gradient_correctness},
      {"real-time budget (1000-record replay p95)", realtime_budget},
      {"translation invariance", translation_invariance},
      {"mlp fit", [&] { return mlp_fit(mlp); }},
      {"tactile shadowlessness", [&] {
         if (!mlp) return Outcome{false, "no trained mlp"};
         return shadowlessness(*mlp);
       }},
      {"sphere-press geometry", sphere_press},
      {"preprocessing conformance", preprocessing},
      {"cli round trips and exit codes", cli_round_trips},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    Outcome o{false, ""};
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s  %s: %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
