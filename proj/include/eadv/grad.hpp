#pragma once

// Smoothed and scale-invariant gradient computations: the per-model inner
// loop of the attack. The dropout mask multiplies both the input and (chain
// rule) the returned gradient, so a fully masked input yields a zero update.

#include <Eigen/Dense>

#include "eadv/model.hpp"
#include "eadv/optim.hpp"

namespace eadv {

// Sum over rounds of the gradient at dropout-masked, noise-shifted copies of
// x. Raw sum; normalization is a separate step. The first round assigns into
// the accumulator, so one degenerate round reproduces input_gradient bit for
// bit.
inline GradientVector smoothed_gradient_sum(const SurrogateModel& model, const AudioClip& x,
                                            int target, const SmoothingDraws& draws,
                                            double* mean_loss = nullptr) {
  GradientVector acc;
  double loss_sum = 0.0;
  AudioClip perturbed = x;
  for (int m = 0; m < draws.rounds; ++m) {
    const Eigen::VectorXd* mask = draws.mask_for(m);
    const Eigen::VectorXd* noise = draws.noise_for(m);
    if (mask != nullptr || noise != nullptr) {
      perturbed.samples = x.samples;
      for (std::size_t i = 0; i < perturbed.samples.size(); ++i) {
        double s = perturbed.samples[i];
        if (mask != nullptr) s *= (*mask)[static_cast<Eigen::Index>(i)];
        if (noise != nullptr) s += (*noise)[static_cast<Eigen::Index>(i)];
        perturbed.samples[i] = s;
      }
    }
    double loss = 0.0;
    GradientVector g = model.input_gradient(mask == nullptr && noise == nullptr ? x : perturbed,
                                            target, &loss);
    if (mask != nullptr) g.array() *= mask->array();
    loss_sum += loss;
    if (m == 0)
      acc = std::move(g);
    else
      acc += g;
  }
  if (mean_loss != nullptr) *mean_loss = loss_sum / draws.rounds;
  return acc;
}

inline GradientVector smooth_gradient(const SurrogateModel& model, const AudioClip& x, int target,
                                      const SmoothingConfig& cfg, Rng& rng,
                                      double* mean_loss = nullptr) {
  return smoothed_gradient_sum(model, x, target, draw_smoothing(cfg, x.samples.size(), rng),
                               mean_loss);
}

// (1/m) * sum_{i=1..m} d/dx loss(S_i(x), target); the chain rule contributes
// the 1/2^i factor per term.
inline GradientVector scale_invariant_gradient(const SurrogateModel& model, const AudioClip& x,
                                               int target, int m_scales,
                                               double* mean_loss = nullptr) {
  if (m_scales < 1) throw ArgumentError("scale_invariant_gradient: m_scales must be >= 1");
  GradientVector acc;
  double loss_sum = 0.0;
  for (int i = 1; i <= m_scales; ++i) {
    double loss = 0.0;
    GradientVector g = model.input_gradient(scale_copy(x, i), target, &loss);
    g *= std::ldexp(1.0, -i);
    loss_sum += loss;
    if (i == 1)
      acc = std::move(g);
    else
      acc += g;
  }
  if (mean_loss != nullptr) *mean_loss = loss_sum / m_scales;
  return acc / static_cast<double>(m_scales);
}

}  // namespace eadv
