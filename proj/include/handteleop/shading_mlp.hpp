// Copyright 2026 The handteleop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <numbers>
#include <numeric>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "handteleop/errors.hpp"
#include "handteleop/rng.hpp"
#include "handteleop/tactile.hpp"

namespace handteleop::tactile {

inline std::size_t posenc_width(int bands) { return 3 * (2 * static_cast<std::size_t>(bands) + 1); }

/// Fully connected net on [posenc(n), posenc(v)]: tanh hidden layers, one
/// sigmoid output.
class ShadingMlp {
 public:
  ShadingMlp() = default;

  /// Zero-initialized weights for the given layer sizes (input first, output last).
  explicit ShadingMlp(std::vector<std::size_t> layer_sizes) : sizes_(std::move(layer_sizes)) {
    if (sizes_.size() < 2) throw ValidationError("mlp needs at least an input and an output layer");
    if (sizes_.back() != 1) throw ValidationError("mlp output width must be 1");
    const std::size_t in = sizes_.front();
    if (in == 0 || in % 6 != 0 || (in / 6) % 2 != 1)
      throw ValidationError("mlp input width " + std::to_string(in) + " is not 6(2L+1)");
    bands_ = static_cast<int>((in / 6 - 1) / 2);
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      if (sizes_[l + 1] == 0) throw ValidationError("mlp layer width must be positive");
      weights_.push_back(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(sizes_[l + 1]),
                                               static_cast<Eigen::Index>(sizes_[l])));
      biases_.push_back(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(sizes_[l + 1])));
    }
  }

  static ShadingMlp with_hidden(int bands, const std::vector<std::size_t>& hidden) {
    if (bands < 0) throw ValidationError("posenc bands must be >= 0");
    std::vector<std::size_t> sizes{2 * posenc_width(bands)};
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(1);
    return ShadingMlp(std::move(sizes));
  }

  const std::vector<std::size_t>& layer_sizes() const { return sizes_; }
  int posenc_bands() const { return bands_; }
  std::size_t num_layers() const { return weights_.size(); }

  Eigen::MatrixXd& weight(std::size_t l) { return weights_.at(l); }
  const Eigen::MatrixXd& weight(std::size_t l) const { return weights_.at(l); }
  Eigen::VectorXd& bias(std::size_t l) { return biases_.at(l); }
  const Eigen::VectorXd& bias(std::size_t l) const { return biases_.at(l); }

  bool all_finite() const {
    for (std::size_t l = 0; l < weights_.size(); ++l)
      if (!weights_[l].allFinite() || !biases_[l].allFinite()) return false;
    return true;
  }

  friend bool operator==(const ShadingMlp& a, const ShadingMlp& b) {
    if (a.sizes_ != b.sizes_) return false;
    for (std::size_t l = 0; l < a.weights_.size(); ++l)
      if (a.weights_[l] != b.weights_[l] || a.biases_[l] != b.biases_[l]) return false;
    return true;
  }

 private:
  std::vector<std::size_t> sizes_;
  int bands_ = 0;
  std::vector<Eigen::MatrixXd> weights_;
  std::vector<Eigen::VectorXd> biases_;
};

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

inline Eigen::VectorXd mlp_input(const Vec3& n, const Vec3& v, int bands) {
  const auto w = static_cast<Eigen::Index>(posenc_width(bands));
  Eigen::VectorXd x(2 * w);
  x.head(w) = posenc(n, bands);
  x.tail(w) = posenc(v, bands);
  return x;
}

inline double mlp_forward_encoded(const ShadingMlp& m, const Eigen::VectorXd& x) {
  if (m.num_layers() == 0) throw ValidationError("mlp has no layers");
  if (static_cast<std::size_t>(x.size()) != m.layer_sizes().front())
    throw ValidationError("mlp input width mismatch");
  Eigen::VectorXd a = x;
  for (std::size_t l = 0; l < m.num_layers(); ++l) {
    if (m.weight(l).cols() != a.size() || m.bias(l).size() != m.weight(l).rows())
      throw ValidationError("mlp weight shapes are inconsistent");
    Eigen::VectorXd z = m.weight(l) * a + m.bias(l);
    if (l + 1 < m.num_layers()) a = z.array().tanh().matrix();
    else a = std::move(z);
  }
  return sigmoid(a[0]);
}

inline double mlp_forward(const ShadingMlp& m, const Vec3& n, const Vec3& v) {
  return mlp_forward_encoded(m, mlp_input(n, v, m.posenc_bands()));
}

/// One GEMV chain per pixel; no batching across pixels, so a pixel's value
/// depends only on its own (n, v).
inline TactileImage shade_mlp(const NormalMap& nm, const ViewMap& vm, const ShadingMlp& m) {
  if (!nm.same_shape(vm)) throw ValidationError("normal map and view map differ in size");
  if (!m.all_finite()) throw ValidationError("mlp weights are not finite");
  TactileImage out(nm.width(), nm.height());
  auto n = nm.pixels();
  auto v = vm.pixels();
  auto px = out.pixels();
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = quantize_intensity(mlp_forward(m, n[i], v[i]));
  return out;
}

// --- training -------------------------------------------------------------

struct TrainParams {
  int posenc_bands = 4;
  std::vector<std::size_t> hidden{64, 64};
  std::size_t dataset_size = 20000;
  std::size_t holdout_size = 4000;
  int epochs = 120;
  std::size_t batch_size = 128;
  double learning_rate = 3e-3;
  double max_normal_tilt = 80.0 * std::numbers::pi / 180.0;
  double max_view_tilt = 60.0 * std::numbers::pi / 180.0;
  double target_rmse = 0.01;
  std::uint64_t seed = 0;

  void validate() const {
    if (dataset_size < 1000) throw ValidationError("dataset_size must be >= 1000");
    if (holdout_size == 0) throw ValidationError("holdout_size must be positive");
    if (epochs < 1) throw ValidationError("epochs must be >= 1");
    if (batch_size == 0) throw ValidationError("batch_size must be positive");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ValidationError("learning_rate must be positive");
    if (posenc_bands < 0) throw ValidationError("posenc bands must be >= 0");
    if (!(max_normal_tilt > 0.0 && max_normal_tilt < std::numbers::pi / 2))
      throw ValidationError("max_normal_tilt must lie in (0, pi/2)");
    if (!(max_view_tilt > 0.0 && max_view_tilt < std::numbers::pi / 2))
      throw ValidationError("max_view_tilt must lie in (0, pi/2)");
  }
};

struct TrainReport {
  ShadingMlp mlp;
  double train_rmse = 0.0;
  double holdout_rmse = 0.0;
  double holdout_psnr = 0.0;
  int epochs_run = 0;
  bool converged = false;  // holdout_rmse <= target_rmse
};

struct ShadingSamples {
  std::vector<Vec3> normals;
  std::vector<Vec3> views;
  Eigen::VectorXd targets;
};

inline Vec3 sample_hemisphere_direction(Xoshiro256& rng, double max_tilt) {
  const double tilt = rng.uniform(0.0, max_tilt);
  const double azimuth = rng.uniform(0.0, 2.0 * std::numbers::pi);
  return {std::sin(tilt) * std::cos(azimuth), std::sin(tilt) * std::sin(azimuth), std::cos(tilt)};
}

inline ShadingSamples sample_shading(const ShadingParams& oracle, std::size_t count, double max_normal_tilt,
                                     double max_view_tilt, Xoshiro256& rng) {
  ShadingSamples s;
  s.normals.reserve(count);
  s.views.reserve(count);
  s.targets.resize(static_cast<Eigen::Index>(count));
  for (std::size_t i = 0; i < count; ++i) {
    s.normals.push_back(sample_hemisphere_direction(rng, max_normal_tilt));
    s.views.push_back(sample_hemisphere_direction(rng, max_view_tilt));
    s.targets[static_cast<Eigen::Index>(i)] = shade_intensity(s.normals.back(), s.views.back(), oracle);
  }
  return s;
}

inline double mlp_rmse(const ShadingMlp& m, const ShadingSamples& s) {
  double sse = 0.0;
  for (std::size_t i = 0; i < s.normals.size(); ++i) {
    const double e = mlp_forward(m, s.normals[i], s.views[i]) - s.targets[static_cast<Eigen::Index>(i)];
    sse += e * e;
  }
  return std::sqrt(sse / static_cast<double>(s.normals.size()));
}

// Peak signal 1 on the [0, 1] intensity scale.
inline double psnr_from_rmse(double rmse) { return rmse > 0.0 ? -20.0 * std::log10(rmse) : INFINITY; }

/// Fits the MLP to the analytic shading model by mini-batch Adam with a
/// cosine learning-rate schedule. Single-threaded; bit-identical per seed.
/// A fit that misses `target_rmse` is reported through `converged`, not thrown.
inline TrainReport train_shading_mlp(const ShadingParams& oracle, const TrainParams& tp) {
  oracle.validate();
  tp.validate();
  Xoshiro256 rng(tp.seed);
  ShadingMlp mlp = ShadingMlp::with_hidden(tp.posenc_bands, tp.hidden);
  const std::size_t layers = mlp.num_layers();

  // Glorot-uniform hidden layers; the output layer starts at zero so the
  // untrained net is the constant 0.5.
  for (std::size_t l = 0; l + 1 < layers; ++l) {
    auto& w = mlp.weight(l);
    const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
    for (Eigen::Index c = 0; c < w.cols(); ++c)
      for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = rng.uniform(-limit, limit);
  }

  const ShadingSamples train = sample_shading(oracle, tp.dataset_size, tp.max_normal_tilt, tp.max_view_tilt, rng);
  const ShadingSamples holdout = sample_shading(oracle, tp.holdout_size, tp.max_normal_tilt, tp.max_view_tilt, rng);

  const auto in_width = static_cast<Eigen::Index>(mlp.layer_sizes().front());
  Eigen::MatrixXd features(in_width, static_cast<Eigen::Index>(tp.dataset_size));
  for (std::size_t i = 0; i < tp.dataset_size; ++i)
    features.col(static_cast<Eigen::Index>(i)) = mlp_input(train.normals[i], train.views[i], tp.posenc_bands);

  std::vector<Eigen::MatrixXd> mw, vw;
  std::vector<Eigen::VectorXd> mb, vb;
  for (std::size_t l = 0; l < layers; ++l) {
    mw.push_back(Eigen::MatrixXd::Zero(mlp.weight(l).rows(), mlp.weight(l).cols()));
    vw.push_back(mw.back());
    mb.push_back(Eigen::VectorXd::Zero(mlp.bias(l).size()));
    vb.push_back(mb.back());
  }
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  double beta1_pow = 1.0, beta2_pow = 1.0;

  std::vector<std::size_t> order(tp.dataset_size);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<Eigen::MatrixXd> acts(layers + 1);
  Eigen::MatrixXd batch_x;
  Eigen::RowVectorXd batch_t;

  for (int epoch = 0; epoch < tp.epochs; ++epoch) {
    const double lr = tp.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * epoch / tp.epochs));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    for (std::size_t start = 0; start < order.size(); start += tp.batch_size) {
      const std::size_t count = std::min(tp.batch_size, order.size() - start);
      const auto bn = static_cast<Eigen::Index>(count);
      batch_x.resize(in_width, bn);
      batch_t.resize(bn);
      for (Eigen::Index k = 0; k < bn; ++k) {
        const auto idx = static_cast<Eigen::Index>(order[start + static_cast<std::size_t>(k)]);
        batch_x.col(k) = features.col(idx);
        batch_t[k] = train.targets[idx];
      }

      acts[0] = batch_x;
      for (std::size_t l = 0; l < layers; ++l) {
        Eigen::MatrixXd z = mlp.weight(l) * acts[l];
        z.colwise() += mlp.bias(l);
        acts[l + 1] = l + 1 < layers ? Eigen::MatrixXd(z.array().tanh()) : Eigen::MatrixXd(z.unaryExpr(&sigmoid));
      }

      // d(mean squared error)/dz at the sigmoid output.
      const Eigen::RowVectorXd y = acts[layers].row(0);
      Eigen::MatrixXd delta =
          (2.0 / static_cast<double>(count)) * ((y - batch_t).array() * y.array() * (1.0 - y.array())).matrix();

      beta1_pow *= kBeta1;
      beta2_pow *= kBeta2;
      const double step = lr * std::sqrt(1.0 - beta2_pow) / (1.0 - beta1_pow);
      for (std::size_t l = layers; l-- > 0;) {
        const Eigen::MatrixXd gw = delta * acts[l].transpose();
        const Eigen::VectorXd gb = delta.rowwise().sum();
        if (l > 0) delta = ((mlp.weight(l).transpose() * delta).array() * (1.0 - acts[l].array().square())).matrix();

        mw[l] = kBeta1 * mw[l] + (1.0 - kBeta1) * gw;
        vw[l] = kBeta2 * vw[l] + (1.0 - kBeta2) * gw.cwiseProduct(gw);
        mb[l] = kBeta1 * mb[l] + (1.0 - kBeta1) * gb;
        vb[l] = kBeta2 * vb[l] + (1.0 - kBeta2) * gb.cwiseProduct(gb);
        mlp.weight(l).array() -= step * mw[l].array() / (vw[l].array().sqrt() + kEps);
        mlp.bias(l).array() -= step * mb[l].array() / (vb[l].array().sqrt() + kEps);
      }
    }
  }

  TrainReport report;
  report.epochs_run = tp.epochs;
  report.train_rmse = mlp_rmse(mlp, train);
  report.holdout_rmse = mlp_rmse(mlp, holdout);
  report.holdout_psnr = psnr_from_rmse(report.holdout_rmse);
  report.converged = mlp.all_finite() && report.holdout_rmse <= tp.target_rmse;
  report.mlp = std::move(mlp);
  return report;
}

// --- weights file ---------------------------------------------------------
// u32 LE count, count x u32 LE layer sizes, then for each layer its weight
// matrix (row-major) and bias vector as f64 LE.

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
  out.write(b, 4);
}

inline void put_f64(std::ostream& out, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
  out.write(b, 8);
}

inline std::uint64_t get_le(std::istream& in, int bytes) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), bytes);
  if (in.gcount() != bytes) throw ValidationError("truncated mlp weights file");
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace detail

inline void write_mlp_weights(std::ostream& out, const ShadingMlp& m) {
  detail::put_u32(out, static_cast<std::uint32_t>(m.layer_sizes().size()));
  for (auto s : m.layer_sizes()) detail::put_u32(out, static_cast<std::uint32_t>(s));
  for (std::size_t l = 0; l < m.num_layers(); ++l) {
    const auto& w = m.weight(l);
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) detail::put_f64(out, w(r, c));
    for (Eigen::Index r = 0; r < m.bias(l).size(); ++r) detail::put_f64(out, m.bias(l)[r]);
  }
}

inline ShadingMlp read_mlp_weights(std::istream& in) {
  const auto count = detail::get_le(in, 4);
  if (count < 2 || count > 64) throw ValidationError("implausible mlp layer count " + std::to_string(count));
  std::vector<std::size_t> sizes;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto s = detail::get_le(in, 4);
    if (s == 0 || s > 1u << 16) throw ValidationError("implausible mlp layer size " + std::to_string(s));
    sizes.push_back(static_cast<std::size_t>(s));
  }
  ShadingMlp m(sizes);
  for (std::size_t l = 0; l < m.num_layers(); ++l) {
    auto& w = m.weight(l);
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = std::bit_cast<double>(detail::get_le(in, 8));
    for (Eigen::Index r = 0; r < m.bias(l).size(); ++r) m.bias(l)[r] = std::bit_cast<double>(detail::get_le(in, 8));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw ValidationError("trailing bytes after mlp weights");
  if (!m.all_finite()) throw ValidationError("mlp weights are not finite");
  return m;
}

inline nlohmann::json train_sidecar(const TrainParams& tp, const ShadingParams& oracle, const TrainReport& r) {
  return {
      {"posenc_bands", tp.posenc_bands},
      {"hidden", tp.hidden},
      {"activation", "tanh"},
      {"output", "sigmoid"},
      {"dataset_size", tp.dataset_size},
      {"holdout_size", tp.holdout_size},
      {"epochs", tp.epochs},
      {"batch_size", tp.batch_size},
      {"learning_rate", tp.learning_rate},
      {"schedule", "cosine"},
      {"seed", tp.seed},
      {"shading",
       {{"ambient", oracle.ambient},
        {"diffuse_gain", oracle.diffuse_gain},
        {"specular_gain", oracle.specular_gain},
        {"shininess", oracle.shininess}}},
      {"train_rmse", r.train_rmse},
      {"holdout_rmse", r.holdout_rmse},
      {"holdout_psnr_db", r.holdout_psnr},
      {"converged", r.converged},
  };
}

inline void save_mlp(const std::string& path, const ShadingMlp& m, const nlohmann::json& sidecar) {
  {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot write '" + path + "'");
    write_mlp_weights(f, m);
  }
  std::ofstream s(path + ".json");
  if (!s) throw ValidationError("cannot write '" + path + ".json'");
  s << sidecar.dump(2) << '\n';
}

/// Reads the binary weights. If a sidecar exists its posenc_bands must agree.
inline ShadingMlp load_mlp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot open '" + path + "'");
  ShadingMlp m = read_mlp_weights(f);
  std::ifstream s(path + ".json");
  if (s) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(s);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("bad mlp sidecar: " + std::string(e.what()));
    }
    if (j.contains("posenc_bands") && j["posenc_bands"] != m.posenc_bands())
      throw ValidationError("mlp sidecar posenc_bands disagrees with weight shapes");
  }
  return m;
}

}  // namespace handteleop::tactile
