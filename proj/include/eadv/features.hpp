#pragma once

// Differentiable log-mel front-end. Every model gradient in the pipeline
// flows through this map, so it is built as an explicit composition of
// linear/elementwise stages whose adjoint is exact:
//
//   frame -> Hann window -> DFT power (two fixed real matrices)
//         -> triangular mel filterbank -> log(floor + energy)
//
// The DFT is deliberately realized as dense cos/sin matrices: the backward
// pass is then just the transposed GEMMs. O(frame^2) per frame is fine at
// desk scale and the GEMMs dominate everything else in the attack loop.

#include <Eigen/Dense>
#include <cmath>
#include <memory>
#include <mutex>
#include <vector>

#include "eadv/audio.hpp"
#include "eadv/common.hpp"

namespace eadv {

struct FeatureConfig {
  int frame_length = 400;  // 25 ms at 16 kHz
  int hop = 160;           // 10 ms
  int mel_bins = 26;
  int sample_rate = 16000;
  double mel_fmin = 0.0;
  double mel_fmax = 8000.0;
  double energy_floor = 1e-10;

  bool operator==(const FeatureConfig&) const = default;
};

// F x B matrix of log-mel energies plus the framing that produced it.
struct FeatureMatrix {
  Eigen::MatrixXd values;  // rows = frames, cols = mel bins
  int frame_length = 400;
  int hop = 160;

  Eigen::Index frames() const { return values.rows(); }
  Eigen::Index bins() const { return values.cols(); }
};

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

class MelFrontEnd {
 public:
  explicit MelFrontEnd(const FeatureConfig& cfg) : cfg_(cfg) {
    if (cfg.frame_length <= 0 || cfg.hop <= 0 || cfg.mel_bins <= 0 || cfg.sample_rate <= 0)
      throw ArgumentError("MelFrontEnd: frame_length, hop, mel_bins, sample_rate must be positive");
    const int n = cfg.frame_length;
    const int bins = n / 2 + 1;

    window_.resize(n);
    for (int i = 0; i < n; ++i)
      window_[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / (n - 1));

    dft_cos_.resize(bins, n);
    dft_sin_.resize(bins, n);
    for (int b = 0; b < bins; ++b) {
      for (int t = 0; t < n; ++t) {
        const double ang = 2.0 * M_PI * b * t / n;
        dft_cos_(b, t) = std::cos(ang);
        dft_sin_(b, t) = std::sin(ang);
      }
    }

    mel_bank_ = build_mel_bank(cfg, bins);
  }

  const FeatureConfig& config() const { return cfg_; }

  Eigen::Index frame_count(std::size_t n_samples) const {
    if (n_samples < static_cast<std::size_t>(cfg_.frame_length)) return 0;
    return static_cast<Eigen::Index>((n_samples - cfg_.frame_length) / cfg_.hop) + 1;
  }

  // Retained intermediates of one forward pass; backprop() consumes them.
  struct Workspace {
    Eigen::MatrixXd windowed;  // N x F
    Eigen::MatrixXd re, im;    // bins x F
    Eigen::MatrixXd mel;       // mel_bins x F (pre-log energies)
    FeatureMatrix features;    // F x mel_bins
  };

  void forward(const std::vector<double>& x, Workspace& ws) const {
    const Eigen::Index f_count = frame_count(x.size());
    if (f_count == 0)
      throw ArgumentError("log_mel_features: clip shorter than one frame (" +
                          std::to_string(x.size()) + " < " +
                          std::to_string(cfg_.frame_length) + " samples)");
    const int n = cfg_.frame_length;
    ws.windowed.resize(n, f_count);
    for (Eigen::Index f = 0; f < f_count; ++f) {
      const double* src = x.data() + static_cast<std::size_t>(f) * cfg_.hop;
      for (int t = 0; t < n; ++t) ws.windowed(t, f) = window_[t] * src[t];
    }
    ws.re.noalias() = dft_cos_ * ws.windowed;
    ws.im.noalias() = dft_sin_ * ws.windowed;
    ws.mel.noalias() = mel_bank_ * (ws.re.array().square() + ws.im.array().square()).matrix();
    ws.features.frame_length = cfg_.frame_length;
    ws.features.hop = cfg_.hop;
    ws.features.values = (ws.mel.array() + cfg_.energy_floor).log().matrix().transpose();
  }

  FeatureMatrix features(const AudioClip& clip) const {
    Workspace ws;
    forward(clip.samples, ws);
    return std::move(ws.features);
  }

  // Exact adjoint of forward(): maps dL/dfeatures to dL/dsamples.
  Eigen::VectorXd backprop(const Workspace& ws, const Eigen::MatrixXd& grad_features,
                           std::size_t n_samples) const {
    const Eigen::Index f_count = ws.mel.cols();
    if (grad_features.rows() != f_count || grad_features.cols() != cfg_.mel_bins)
      throw ArgumentError("feature_backprop: gradient shape " +
                          std::to_string(grad_features.rows()) + "x" +
                          std::to_string(grad_features.cols()) + " does not match features " +
                          std::to_string(f_count) + "x" + std::to_string(cfg_.mel_bins));
    Eigen::MatrixXd d_mel =
        (grad_features.transpose().array() / (ws.mel.array() + cfg_.energy_floor)).matrix();
    Eigen::MatrixXd d_power = mel_bank_.transpose() * d_mel;
    Eigen::MatrixXd d_re = 2.0 * ws.re.array() * d_power.array();
    Eigen::MatrixXd d_im = 2.0 * ws.im.array() * d_power.array();
    Eigen::MatrixXd d_windowed = dft_cos_.transpose() * d_re;
    d_windowed.noalias() += dft_sin_.transpose() * d_im;

    Eigen::VectorXd grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_samples));
    const int n = cfg_.frame_length;
    for (Eigen::Index f = 0; f < f_count; ++f) {
      double* dst = grad.data() + static_cast<std::size_t>(f) * cfg_.hop;
      for (int t = 0; t < n; ++t) dst[t] += window_[t] * d_windowed(t, f);
    }
    return grad;
  }

 private:
  static Eigen::MatrixXd build_mel_bank(const FeatureConfig& cfg, int bins) {
    const double mel_lo = hz_to_mel(cfg.mel_fmin);
    const double mel_hi = hz_to_mel(cfg.mel_fmax);
    std::vector<double> edges(static_cast<std::size_t>(cfg.mel_bins) + 2);
    for (int j = 0; j < cfg.mel_bins + 2; ++j)
      edges[j] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * j / (cfg.mel_bins + 1));

    Eigen::MatrixXd bank = Eigen::MatrixXd::Zero(cfg.mel_bins, bins);
    const double bin_hz = static_cast<double>(cfg.sample_rate) / cfg.frame_length;
    for (int j = 0; j < cfg.mel_bins; ++j) {
      const double lo = edges[j], mid = edges[j + 1], hi = edges[j + 2];
      for (int b = 0; b < bins; ++b) {
        const double f = b * bin_hz;
        double w = 0.0;
        if (f > lo && f < mid)
          w = (f - lo) / (mid - lo);
        else if (f >= mid && f < hi)
          w = (hi - f) / (hi - mid);
        bank(j, b) = w;
      }
    }
    return bank;
  }

  FeatureConfig cfg_;
  Eigen::VectorXd window_;
  Eigen::MatrixXd dft_cos_, dft_sin_;  // bins x N
  Eigen::MatrixXd mel_bank_;           // mel_bins x bins
};

// Process-wide cache of front-ends (the DFT matrices are ~1.3 MB each and
// every model in a run shares the same config).
inline const MelFrontEnd& frontend_for(const FeatureConfig& cfg = {}) {
  static std::mutex mu;
  static std::vector<std::unique_ptr<MelFrontEnd>> cache;
  std::lock_guard<std::mutex> lock(mu);
  for (const auto& fe : cache)
    if (fe->config() == cfg) return *fe;
  cache.push_back(std::make_unique<MelFrontEnd>(cfg));
  return *cache.back();
}

inline FeatureMatrix log_mel_features(const AudioClip& clip, const FeatureConfig& cfg = {}) {
  return frontend_for(cfg).features(clip);
}

inline Eigen::VectorXd feature_backprop(const AudioClip& clip, const Eigen::MatrixXd& grad_features,
                                        const FeatureConfig& cfg = {}) {
  const MelFrontEnd& fe = frontend_for(cfg);
  MelFrontEnd::Workspace ws;
  fe.forward(clip.samples, ws);
  return fe.backprop(ws, grad_features, clip.samples.size());
}

}  // namespace eadv
