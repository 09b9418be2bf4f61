// Copyright 2026 The handteleop Authors
// SPDX-License-Identifier: Apache-2.0

// handteleop: replay, tactile rendering, dataset preprocessing and the live
// teleop service behind one binary.
//
// Exit codes: 0 ok, 1 unexpected failure, 2 invalid input or usage,
// 3 replay non-convergence above --max-nonconverged.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <boost/asio/signal_set.hpp>
#include <nlohmann/json.hpp>

#include "handteleop/dataset.hpp"
#include "handteleop/hand_model.hpp"
#include "handteleop/image.hpp"
#include "handteleop/pose_stream.hpp"
#include "handteleop/retarget.hpp"
#include "handteleop/shading_mlp.hpp"
#include "handteleop/tactile_render.hpp"
#include "handteleop/teleop/server.hpp"

namespace ht = handteleop;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitInvalid = 2;
constexpr int kExitNonConverged = 3;

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ht::ValidationError("cannot write '" + path + "'");
  return f;
}

struct ReplayOpts {
  std::string model = HANDTELEOP_DEFAULT_MODEL;
  std::string stream;
  std::string out;
  std::string stats_json;
  double alpha = ht::RetargetParams{}.alpha;
  double human_scale = 1.0;
  int max_iters = ht::RetargetParams{}.max_iters;
  double max_nonconverged = 0.05;
};

int run_replay(const ReplayOpts& o) {
  const ht::HandModel model = ht::load_hand_model_file(o.model);
  const ht::PoseStream stream = ht::load_pose_stream_file(o.stream);
  ht::RetargetParams params;
  params.alpha = o.alpha;
  params.human_scale = o.human_scale;
  params.max_iters = o.max_iters;
  const ht::ReplayResult res = ht::replay(model, stream, params);
  {
    auto f = open_out(o.out);
    ht::write_trajectory_csv(f, res.trajectory, model.dof());
  }
  const nlohmann::json stats = ht::stats_json(res.stats);
  if (!o.stats_json.empty()) open_out(o.stats_json) << stats.dump(2) << '\n';
  std::cerr << stats.dump() << '\n';
  if (1.0 - res.stats.convergence_rate > o.max_nonconverged) {
    std::cerr << "error: " << (1.0 - res.stats.convergence_rate) * 100.0 << "% of steps did not converge (limit "
              << o.max_nonconverged * 100.0 << "%)\n";
    return kExitNonConverged;
  }
  return kExitOk;
}

struct SynthOpts {
  std::string model = HANDTELEOP_DEFAULT_MODEL;
  std::string out;
  std::size_t records = 1000;
  std::uint64_t seed = 0;
  double step = 0.01;
  double rate = 125.0;
};

int run_synth(const SynthOpts& o) {
  const ht::HandModel model = ht::load_hand_model_file(o.model);
  auto f = open_out(o.out);
  ht::write_pose_stream(f, ht::synthesize_pose_stream(model, o.records, o.seed, o.step, o.rate));
  return kExitOk;
}

struct RenderOpts {
  std::string scene;
  std::string mode = "analytic";
  std::string weights;
  std::string out;
};

int run_render(const RenderOpts& o) {
  const ht::tactile::SceneFile sf = ht::tactile::load_scene_file(o.scene);
  ht::tactile::TactileImage img;
  if (o.mode == "mlp") {
    if (o.weights.empty()) throw ht::ValidationError("--mode mlp needs --weights");
    const ht::tactile::ShadingMlp mlp = ht::tactile::load_mlp(o.weights);
    img = ht::tactile::render(sf.scene, sf.pipeline, ht::tactile::ShadeMode::kMlp, &mlp);
  } else {
    img = ht::tactile::render(sf.scene, sf.pipeline, ht::tactile::ShadeMode::kAnalytic);
  }
  ht::write_pgm_file(o.out, img);
  return kExitOk;
}

struct TrainOpts {
  std::uint64_t seed = 0;
  std::string out;
  int epochs = ht::tactile::TrainParams{}.epochs;
  std::size_t samples = ht::tactile::TrainParams{}.dataset_size;
};

int run_train(const TrainOpts& o) {
  ht::tactile::TrainParams tp;
  tp.seed = o.seed;
  tp.epochs = o.epochs;
  tp.dataset_size = o.samples;
  const ht::tactile::ShadingParams oracle;
  const ht::tactile::TrainReport r = ht::tactile::train_shading_mlp(oracle, tp);
  const nlohmann::json side = ht::tactile::train_sidecar(tp, oracle, r);
  ht::tactile::save_mlp(o.out, r.mlp, side);
  std::cerr << side.dump() << '\n';
  return kExitOk;
}

struct TileOpts {
  std::vector<std::string> in;
  std::string out;
};

int run_tile(const TileOpts& o) {
  if (o.in.size() != 4) throw ht::ValidationError("tile needs exactly four --in images");
  std::vector<ht::Image8> imgs;
  for (const auto& p : o.in) imgs.push_back(ht::read_pgm_file(p));
  ht::write_pgm_file(o.out, ht::tile_super_image(std::span<const ht::Image8>(imgs)));
  return kExitOk;
}

struct ResizeOpts {
  std::string in;
  std::string out;
  std::size_t width = 480;
  std::size_t height = 320;
};

int run_resize(const ResizeOpts& o) {
  ht::write_pgm_file(o.out, ht::resize_image(ht::read_pgm_file(o.in), o.width, o.height));
  return kExitOk;
}

struct DropoutOpts {
  std::vector<std::string> global;
  std::vector<std::string> wrist;
  std::string out_dir;
  double p = 0.0;
  std::uint64_t seed = 0;
};

// Item i is (global[i], wrist[i]). Outputs are prefixed copies in --out-dir.
int run_dropout(const DropoutOpts& o) {
  if (o.global.size() != o.wrist.size()) throw ht::ValidationError("need one --wrist image per --global image");
  ht::SampleBatch batch(o.global.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    batch[i].global_img = ht::read_pgm_file(o.global[i]);
    batch[i].wrist_img = ht::read_pgm_file(o.wrist[i]);
  }
  const ht::DropoutResult res = ht::vision_dropout(batch, o.p, o.seed);
  namespace fs = std::filesystem;
  fs::create_directories(o.out_dir);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto g = fs::path(o.out_dir) / ("global_" + fs::path(o.global[i]).filename().string());
    const auto w = fs::path(o.out_dir) / ("wrist_" + fs::path(o.wrist[i]).filename().string());
    if (g == w) throw ht::ValidationError("output names collide for item " + std::to_string(i));
    ht::write_pgm_file(g.string(), res.batch[i].global_img);
    ht::write_pgm_file(w.string(), res.batch[i].wrist_img);
  }
  std::cout << nlohmann::json{{"items", batch.size()}, {"dropped", res.dropped}, {"p", o.p}, {"seed", o.seed}}.dump()
            << '\n';
  return kExitOk;
}

struct ServeOpts {
  std::string model = HANDTELEOP_DEFAULT_MODEL;
  std::string host = "127.0.0.1";
  std::uint16_t port = 8765;
  int solver_threads = 2;
  double alpha = ht::RetargetParams{}.alpha;
};

int run_serve(const ServeOpts& o) {
  auto model = std::make_shared<const ht::HandModel>(ht::load_hand_model_file(o.model));
  ht::teleop::ServerConfig cfg;
  cfg.host = o.host;
  cfg.port = o.port;
  cfg.solver_threads = o.solver_threads;
  cfg.defaults.alpha = o.alpha;
  ht::teleop::TeleopServer server(model, cfg);
  server.start();
  std::cerr << "listening on " << o.host << ':' << server.port() << '\n';
  boost::asio::io_context sig_ioc;
  boost::asio::signal_set signals(sig_ioc, SIGINT, SIGTERM);
  signals.async_wait([](const boost::system::error_code&, int) {});
  sig_ioc.run();
  server.stop();
  return kExitOk;
}

int run_describe(const std::string& model_path, bool schema) {
  if (schema) {
    std::cout << ht::teleop::model_descriptor_schema().dump(2) << '\n';
  } else {
    std::cout << ht::teleop::model_descriptor(ht::load_hand_model_file(model_path)).dump(2) << '\n';
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hand teleoperation toolkit: retargeting replay, tactile simulation, dataset preprocessing."};
  app.require_subcommand(1);
  int code = kExitOk;

  auto* retarget = app.add_subcommand("retarget", "Kinematic retargeting")->require_subcommand(1);
  ReplayOpts ro;
  auto* replay = retarget->add_subcommand("replay", "Retarget a pose stream to a joint trajectory CSV");
  replay->add_option("--model", ro.model, "Hand model file")->check(CLI::ExistingFile);
  replay->add_option("--stream", ro.stream, "Pose stream (JSON lines)")->required();
  replay->add_option("--out", ro.out, "Trajectory CSV")->required();
  replay->add_option("--alpha", ro.alpha, "Smoothing weight")->capture_default_str();
  replay->add_option("--human-scale", ro.human_scale, "Human-to-robot length ratio")->capture_default_str();
  replay->add_option("--max-iters", ro.max_iters, "Solver iteration cap")->capture_default_str();
  replay->add_option("--stats-json", ro.stats_json, "Write replay statistics here");
  replay->add_option("--max-nonconverged", ro.max_nonconverged, "Exit 3 if the non-converged fraction exceeds this")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  replay->callback([&] { code = run_replay(ro); });

  auto* stream = app.add_subcommand("stream", "Pose stream utilities")->require_subcommand(1);
  SynthOpts so;
  auto* synth = stream->add_subcommand("synth", "Write a synthetic pose stream from a joint random walk");
  synth->add_option("--model", so.model, "Hand model file")->check(CLI::ExistingFile);
  synth->add_option("--out", so.out, "Pose stream (JSON lines)")->required();
  synth->add_option("--records", so.records)->capture_default_str();
  synth->add_option("--seed", so.seed)->capture_default_str();
  synth->add_option("--step", so.step, "Per-record joint noise, rad")->capture_default_str();
  synth->add_option("--rate", so.rate, "Record rate, Hz")->capture_default_str();
  synth->callback([&] { code = run_synth(so); });

  auto* tactile = app.add_subcommand("tactile", "Tactile sensor simulation")->require_subcommand(1);
  RenderOpts rdo;
  auto* render = tactile->add_subcommand("render", "Render a contact scene to a PGM image");
  render->add_option("--scene", rdo.scene, "Scene JSON")->required()->check(CLI::ExistingFile);
  render->add_option("--mode", rdo.mode)->check(CLI::IsMember({"analytic", "mlp"}))->capture_default_str();
  render->add_option("--weights", rdo.weights, "Shading MLP weights (mlp mode)");
  render->add_option("--out", rdo.out, "Output PGM")->required();
  render->callback([&] { code = run_render(rdo); });

  TrainOpts to;
  auto* train = tactile->add_subcommand("train", "Fit the shading MLP to the analytic shader");
  train->add_option("--seed", to.seed)->capture_default_str();
  train->add_option("--out", to.out, "Weights file; a .json sidecar is written next to it")->required();
  train->add_option("--epochs", to.epochs)->check(CLI::PositiveNumber)->capture_default_str();
  train->add_option("--samples", to.samples, "Training set size")->capture_default_str();
  train->callback([&] { code = run_train(to); });

  auto* data = app.add_subcommand("data", "Dataset preprocessing")->require_subcommand(1);
  TileOpts tio;
  auto* tile = data->add_subcommand("tile", "Tile four equal images into a 2x2 super-image");
  tile->add_option("--in", tio.in, "Four PGM images, row-major")->required()->expected(4);
  tile->add_option("--out", tio.out)->required();
  tile->callback([&] { code = run_tile(tio); });

  ResizeOpts rso;
  auto* resize = data->add_subcommand("resize", "Bilinear resize");
  resize->add_option("--in", rso.in)->required();
  resize->add_option("--out", rso.out)->required();
  resize->add_option("--width", rso.width)->check(CLI::PositiveNumber)->capture_default_str();
  resize->add_option("--height", rso.height)->check(CLI::PositiveNumber)->capture_default_str();
  resize->callback([&] { code = run_resize(rso); });

  DropoutOpts dro;
  auto* dropout = data->add_subcommand("dropout", "Blank both camera images of random samples");
  dropout->add_option("--global", dro.global, "Global camera PGMs")->required();
  dropout->add_option("--wrist", dro.wrist, "Wrist camera PGMs, same order")->required();
  dropout->add_option("--out-dir", dro.out_dir)->required();
  dropout->add_option("--p", dro.p, "Drop probability")->required();
  dropout->add_option("--seed", dro.seed)->capture_default_str();
  dropout->callback([&] { code = run_dropout(dro); });

  auto* teleop = app.add_subcommand("teleop", "Live retargeting service")->require_subcommand(1);
  ServeOpts svo;
  auto* serve = teleop->add_subcommand("serve", "HTTP + WebSocket server");
  serve->add_option("--model", svo.model, "Hand model file")->check(CLI::ExistingFile);
  serve->add_option("--host", svo.host)->capture_default_str();
  serve->add_option("--port", svo.port, "0 picks a free port")->capture_default_str();
  serve->add_option("--solver-threads", svo.solver_threads)->check(CLI::PositiveNumber)->capture_default_str();
  serve->add_option("--alpha", svo.alpha, "Default smoothing weight for new sessions")->capture_default_str();
  serve->callback([&] { code = run_serve(svo); });

  std::string describe_model = HANDTELEOP_DEFAULT_MODEL;
  bool describe_schema = false;
  auto* describe = teleop->add_subcommand("describe", "Print the model descriptor served at GET /model");
  describe->add_option("--model", describe_model, "Hand model file")->check(CLI::ExistingFile);
  describe->add_flag("--schema", describe_schema, "Print the descriptor's JSON Schema instead");
  describe->callback([&] { code = run_describe(describe_model, describe_schema); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInvalid;
  } catch (const ht::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return code;
}
