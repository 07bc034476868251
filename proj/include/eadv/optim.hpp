#pragma once

// Optimizer primitives shared by training and the attack loop: dropout
// masks, gradient normalization, momentum, bias-corrected Adam, and the
// per-sample perturbation clip.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

#include "eadv/audio.hpp"
#include "eadv/common.hpp"

namespace eadv {

// Per-sample gradient of a scalar loss with respect to a waveform.
using GradientVector = Eigen::VectorXd;

// Bernoulli zero-mask: each entry is 0 with probability p, else 1. No
// 1/(1-p) rescaling; there is no inference pass to stay consistent with.
inline Eigen::VectorXd dropout_mask(std::size_t length, double p, Rng& rng) {
  if (p < 0.0 || p > 1.0) throw ArgumentError("dropout_mask: p must be in [0, 1]");
  Eigen::VectorXd mask(static_cast<Eigen::Index>(length));
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask[i] = rng.bernoulli(p) ? 0.0 : 1.0;
  return mask;
}

// g / (mean(|g|) + e_norm). The guard keeps the all-zero gradient at zero.
inline GradientVector normalize_gradient(const GradientVector& g) {
  if (g.size() == 0) return g;
  const double denom = g.array().abs().mean() + 1e-12;
  return g / denom;
}

inline GradientVector momentum_accumulate(const GradientVector& g_prev, const GradientVector& g_t,
                                          double mu) {
  if (g_prev.size() != g_t.size())
    throw ArgumentError("momentum_accumulate: length mismatch (" + std::to_string(g_prev.size()) +
                        " vs " + std::to_string(g_t.size()) + ")");
  return mu * g_prev + g_t;
}

// Standard bias-corrected Adam over a fixed-length vector.
struct AdamState {
  Eigen::VectorXd m, v;
  long t = 0;
  double lr;
  double beta1;
  double beta2;
  double eps;

  explicit AdamState(std::size_t length, double lr_ = 2e-3, double beta1_ = 0.9,
                     double beta2_ = 0.999, double eps_ = 1e-8)
      : m(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(length))),
        v(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(length))),
        lr(lr_),
        beta1(beta1_),
        beta2(beta2_),
        eps(eps_) {}

  // Returns lr * m_hat / (sqrt(v_hat) + eps); the caller owns the sign.
  Eigen::VectorXd step(const Eigen::VectorXd& g) {
    if (g.size() != m.size())
      throw ArgumentError("AdamState::step: gradient length " + std::to_string(g.size()) +
                          " does not match state length " + std::to_string(m.size()));
    if (!g.allFinite()) throw NumericError("AdamState::step: non-finite gradient");
    ++t;
    m = beta1 * m + (1.0 - beta1) * g;
    v = beta2 * v + (1.0 - beta2) * g.array().square().matrix();
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    return (lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps)).matrix();
  }
};

// Projects x_adv into the L-inf ball of radius epsilon around x_orig, then
// into the valid amplitude range [-1, 1].
inline AudioClip clip_perturbation(const AudioClip& x_adv, const AudioClip& x_orig,
                                   double epsilon) {
  if (epsilon < 0) throw ArgumentError("clip_perturbation: epsilon must be >= 0");
  if (x_adv.samples.size() != x_orig.samples.size())
    throw ArgumentError("clip_perturbation: length mismatch");
  AudioClip out = x_adv;
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    const double o = x_orig.samples[i];
    out.samples[i] = std::clamp(std::clamp(out.samples[i], o - epsilon, o + epsilon), -1.0, 1.0);
  }
  return out;
}

struct SmoothingConfig {
  int rounds = 4;               // M
  double noise_amplitude = 0.0; // A
  double dropout_p = 0.0;       // p
  double momentum = 0.9;        // mu (consumed by the attack loop, not here)
  bool mask_per_round = true;

  void validate() const {
    if (rounds < 1) throw ArgumentError("SmoothingConfig: rounds must be >= 1");
    if (noise_amplitude < 0) throw ArgumentError("SmoothingConfig: noise amplitude must be >= 0");
    if (dropout_p < 0 || dropout_p > 1) throw ArgumentError("SmoothingConfig: p must be in [0, 1]");
    if (momentum < 0) throw ArgumentError("SmoothingConfig: momentum must be >= 0");
  }
};

// Pre-drawn smoothing perturbations. Drawing them once per outer iteration
// and sharing them across the base models keeps the rng stream independent
// of the model count (an ensemble of identical models then reproduces the
// single-model trajectory exactly).
struct SmoothingDraws {
  std::vector<Eigen::VectorXd> masks;   // empty, 1 (shared), or one per round
  std::vector<Eigen::VectorXd> noises;  // empty or one per round
  int rounds = 1;

  const Eigen::VectorXd* mask_for(int round) const {
    if (masks.empty()) return nullptr;
    return &masks[std::min<std::size_t>(static_cast<std::size_t>(round), masks.size() - 1)];
  }
  const Eigen::VectorXd* noise_for(int round) const {
    if (noises.empty()) return nullptr;
    return &noises[static_cast<std::size_t>(round)];
  }
};

// Draw order per round is fixed (mask, then noise); determinism contracts
// depend on it.
inline SmoothingDraws draw_smoothing(const SmoothingConfig& cfg, std::size_t length, Rng& rng) {
  cfg.validate();
  SmoothingDraws draws;
  draws.rounds = cfg.rounds;
  for (int m = 0; m < cfg.rounds; ++m) {
    if (cfg.dropout_p > 0 && (cfg.mask_per_round || m == 0))
      draws.masks.push_back(dropout_mask(length, cfg.dropout_p, rng));
    if (cfg.noise_amplitude > 0) {
      Eigen::VectorXd noise(static_cast<Eigen::Index>(length));
      for (Eigen::Index i = 0; i < noise.size(); ++i)
        noise[i] = rng.uniform(-cfg.noise_amplitude, cfg.noise_amplitude);
      draws.noises.push_back(std::move(noise));
    }
  }
  return draws;
}

}  // namespace eadv
