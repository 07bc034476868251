#pragma once

// Ensemble attack strategies and the full outer loop: per-model smoothed
// gradients -> normalization -> per-model momentum -> ensemble combination
// (random pick / norm-weighted / combined loss) -> Adam descent -> L-inf
// projection, with periodic label-only probes of held-out targets.

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "eadv/grad.hpp"
#include "eadv/model.hpp"
#include "eadv/optim.hpp"

namespace eadv {

enum class Strategy { Single, SelfEnsemble, ScaleInvariant, Rge, Dgwe, LossEnsemble };
enum class EnsembleLevel { Loss, Logits, Predictions };

inline const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::Single: return "single";
    case Strategy::SelfEnsemble: return "self_ensemble";
    case Strategy::ScaleInvariant: return "scale_invariant";
    case Strategy::Rge: return "rge";
    case Strategy::Dgwe: return "dgwe";
    case Strategy::LossEnsemble: return "loss_ensemble";
  }
  throw ArgumentError("strategy_name: unknown strategy");
}

inline Strategy strategy_from_name(const std::string& name) {
  for (Strategy s : {Strategy::Single, Strategy::SelfEnsemble, Strategy::ScaleInvariant,
                     Strategy::Rge, Strategy::Dgwe, Strategy::LossEnsemble})
    if (name == strategy_name(s)) return s;
  throw ArgumentError("unknown strategy '" + name + "'");
}

inline const char* ensemble_level_name(EnsembleLevel l) {
  switch (l) {
    case EnsembleLevel::Loss: return "loss";
    case EnsembleLevel::Logits: return "logits";
    case EnsembleLevel::Predictions: return "predictions";
  }
  throw ArgumentError("ensemble_level_name: unknown level");
}

inline EnsembleLevel ensemble_level_from_name(const std::string& name) {
  for (EnsembleLevel l : {EnsembleLevel::Loss, EnsembleLevel::Logits, EnsembleLevel::Predictions})
    if (name == ensemble_level_name(l)) return l;
  throw ArgumentError("unknown ensemble level '" + name + "'");
}

struct AttackConfig {
  double epsilon = 0.12;        // L-inf budget in normalized sample units
  int iterations = 500;         // T
  int smoothing_rounds = 4;     // M
  double dropout_p = 0.5;       // p
  double noise_amplitude = 0.01;  // A
  double momentum = 0.9;        // mu
  double sigma = 1.0;           // weight smoothness
  Strategy strategy = Strategy::Rge;
  EnsembleLevel ensemble_level = EnsembleLevel::Loss;
  std::vector<double> alpha;    // ensemble weights; empty => uniform
  double lr = 2e-3;
  std::uint64_t seed = 0;
  int query_every = 10;
  int scale_copies = 4;         // m for the scale-invariant path
  bool mask_per_round = true;
  bool stop_on_probe_success = false;
  bool stop_on_whitebox_success = false;

  void validate() const {
    if (epsilon < 0) throw ArgumentError("AttackConfig: epsilon must be >= 0");
    if (iterations < 0) throw ArgumentError("AttackConfig: iterations must be >= 0");
    if (smoothing_rounds < 1) throw ArgumentError("AttackConfig: smoothing rounds must be >= 1");
    if (dropout_p < 0 || dropout_p > 1) throw ArgumentError("AttackConfig: p must be in [0, 1]");
    if (noise_amplitude < 0) throw ArgumentError("AttackConfig: noise amplitude must be >= 0");
    if (momentum < 0) throw ArgumentError("AttackConfig: momentum must be >= 0");
    if (sigma <= 0) throw ArgumentError("AttackConfig: sigma must be > 0");
    if (lr <= 0) throw ArgumentError("AttackConfig: lr must be > 0");
    if (query_every < 1) throw ArgumentError("AttackConfig: query_every must be >= 1");
    if (scale_copies < 1) throw ArgumentError("AttackConfig: scale_copies must be >= 1");
    if (!alpha.empty()) {
      double sum = 0;
      for (double a : alpha) {
        if (a < 0) throw ArgumentError("AttackConfig: ensemble weights must be >= 0");
        sum += a;
      }
      if (std::abs(sum - 1.0) > 1e-9)
        throw ArgumentError("AttackConfig: ensemble weights must sum to 1");
    }
  }
};

inline nlohmann::json to_json(const AttackConfig& cfg) {
  return nlohmann::json{{"epsilon", cfg.epsilon},
                        {"iterations", cfg.iterations},
                        {"smoothing_rounds", cfg.smoothing_rounds},
                        {"dropout_p", cfg.dropout_p},
                        {"noise_amplitude", cfg.noise_amplitude},
                        {"momentum", cfg.momentum},
                        {"sigma", cfg.sigma},
                        {"strategy", strategy_name(cfg.strategy)},
                        {"ensemble_level", ensemble_level_name(cfg.ensemble_level)},
                        {"alpha", cfg.alpha},
                        {"lr", cfg.lr},
                        {"seed", cfg.seed},
                        {"query_every", cfg.query_every},
                        {"scale_copies", cfg.scale_copies},
                        {"mask_per_round", cfg.mask_per_round},
                        {"stop_on_probe_success", cfg.stop_on_probe_success},
                        {"stop_on_whitebox_success", cfg.stop_on_whitebox_success}};
}

inline AttackConfig attack_config_from_json(const nlohmann::json& j) {
  AttackConfig cfg;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).template get<std::decay_t<decltype(field)>>();
  };
  get("epsilon", cfg.epsilon);
  get("iterations", cfg.iterations);
  get("smoothing_rounds", cfg.smoothing_rounds);
  get("dropout_p", cfg.dropout_p);
  get("noise_amplitude", cfg.noise_amplitude);
  get("momentum", cfg.momentum);
  get("sigma", cfg.sigma);
  if (j.contains("strategy")) cfg.strategy = strategy_from_name(j.at("strategy").get<std::string>());
  if (j.contains("ensemble_level"))
    cfg.ensemble_level = ensemble_level_from_name(j.at("ensemble_level").get<std::string>());
  get("alpha", cfg.alpha);
  get("lr", cfg.lr);
  get("seed", cfg.seed);
  get("query_every", cfg.query_every);
  get("scale_copies", cfg.scale_copies);
  get("mask_per_round", cfg.mask_per_round);
  get("stop_on_probe_success", cfg.stop_on_probe_success);
  get("stop_on_whitebox_success", cfg.stop_on_whitebox_success);
  return cfg;
}

// Hash of the canonical (key-sorted) config JSON; embedded in every report.
inline std::string config_hash(const AttackConfig& cfg) {
  return hex_string(fnv1a64(to_json(cfg).dump()));
}

// w_i proportional to exp(-||g_i||^(1/sigma^2)), normalized. When every raw
// exponential underflows to zero (mean-abs-normalized waveform gradients have
// euclidean norms in the hundreds, so in a full attack this is the common
// case) the weights fall back to uniform and the flag is set. Away from that
// regime the ratios are evaluated in max-shifted form for precision; the
// values are identical to the direct formula.
inline Eigen::VectorXd dgwe_weights(const std::vector<double>& grad_norms, double sigma,
                                    bool* underflow = nullptr) {
  if (grad_norms.empty()) throw ArgumentError("dgwe_weights: need at least one norm");
  if (sigma <= 0) throw ArgumentError("dgwe_weights: sigma must be > 0");
  const double exponent = 1.0 / (sigma * sigma);
  Eigen::VectorXd score(static_cast<Eigen::Index>(grad_norms.size()));
  for (std::size_t i = 0; i < grad_norms.size(); ++i) {
    if (grad_norms[i] < 0) throw ArgumentError("dgwe_weights: norms must be >= 0");
    score[static_cast<Eigen::Index>(i)] = -std::pow(grad_norms[i], exponent);
  }
  if (underflow != nullptr) *underflow = false;
  const double top = score.maxCoeff();
  const double raw_sum = score.array().exp().sum();  // unshifted, may underflow
  if (std::isfinite(top) && std::isfinite(raw_sum) && raw_sum > 0) {
    const Eigen::ArrayXd w = (score.array() - top).exp();
    return (w / w.sum()).matrix();
  }
  if (underflow != nullptr) *underflow = true;
  return Eigen::VectorXd::Constant(score.size(),
                                   1.0 / static_cast<double>(grad_norms.size()));
}

// Uniform pick from {0..k-1}, fresh each outer iteration.
inline int rge_select(int k, Rng& rng) {
  if (k < 1) throw ArgumentError("rge_select: need at least one model");
  return static_cast<int>(rng.uniform_index(static_cast<std::size_t>(k)));
}

struct EnsembleChoice {
  GradientVector gradient;
  int rge_index = -1;                // set for RGE
  std::vector<double> weights;       // set for DGWE
  bool weight_underflow = false;
};

inline EnsembleChoice ensemble_gradient(Strategy strategy,
                                        const std::vector<GradientVector>& grads, double sigma,
                                        Rng& rng) {
  if (grads.empty()) throw ArgumentError("ensemble_gradient: empty gradient list");
  for (const auto& g : grads)
    if (g.size() != grads.front().size())
      throw ArgumentError("ensemble_gradient: gradient length mismatch");
  EnsembleChoice choice;
  switch (strategy) {
    case Strategy::Rge: {
      choice.rge_index = rge_select(static_cast<int>(grads.size()), rng);
      choice.gradient = grads[static_cast<std::size_t>(choice.rge_index)];
      return choice;
    }
    case Strategy::Dgwe: {
      std::vector<double> norms(grads.size());
      for (std::size_t i = 0; i < grads.size(); ++i) norms[i] = grads[i].norm();
      const Eigen::VectorXd w = dgwe_weights(norms, sigma, &choice.weight_underflow);
      choice.weights.assign(w.data(), w.data() + w.size());
      GradientVector acc = w[0] * grads[0];
      for (std::size_t i = 1; i < grads.size(); ++i)
        acc += w[static_cast<Eigen::Index>(i)] * grads[i];
      choice.gradient = std::move(acc);
      return choice;
    }
    default:
      throw ArgumentError("ensemble_gradient: strategy must be rge or dgwe");
  }
}

namespace detail {

inline std::vector<double> resolve_alpha(const std::vector<double>& alpha, std::size_t k) {
  if (alpha.empty()) return std::vector<double>(k, 1.0 / static_cast<double>(k));
  if (alpha.size() != k)
    throw ArgumentError("ensemble weights: got " + std::to_string(alpha.size()) + " for " +
                        std::to_string(k) + " models");
  double sum = 0;
  for (double a : alpha) {
    if (a < 0) throw ArgumentError("ensemble weights must be >= 0");
    sum += a;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ArgumentError("ensemble weights must sum to 1");
  return alpha;
}

}  // namespace detail

// Combined multi-model objective at one of the three ensemble levels.
inline double ensemble_loss(EnsembleLevel level, const std::vector<double>& alpha,
                            const std::vector<const SurrogateModel*>& models,
                            const AudioClip& clip, int target) {
  if (models.empty()) throw ArgumentError("ensemble_loss: empty model list");
  const std::vector<double> a = detail::resolve_alpha(alpha, models.size());
  switch (level) {
    case EnsembleLevel::Loss: {
      double sum = 0;
      for (std::size_t k = 0; k < models.size(); ++k)
        sum += a[k] * cross_entropy(models[k]->logits(clip), target);
      return sum;
    }
    case EnsembleLevel::Logits: {
      Eigen::VectorXd z = Eigen::VectorXd::Zero(models.front()->num_classes());
      for (std::size_t k = 0; k < models.size(); ++k) z += a[k] * models[k]->logits(clip);
      return cross_entropy(z, target);
    }
    case EnsembleLevel::Predictions: {
      double s = 0;
      for (std::size_t k = 0; k < models.size(); ++k)
        s += a[k] * softmax(models[k]->logits(clip))[target];
      return -std::log(s);
    }
  }
  throw ArgumentError("ensemble_loss: unknown level");
}

// Gradient of ensemble_loss w.r.t. the waveform. All models share the
// front-end, so the per-model feature gradients are summed and pushed through
// a single adjoint pass.
inline GradientVector ensemble_loss_gradient(EnsembleLevel level, const std::vector<double>& alpha,
                                             const std::vector<const SurrogateModel*>& models,
                                             const AudioClip& clip, int target,
                                             double* loss_out = nullptr,
                                             std::vector<double>* per_model_loss = nullptr) {
  if (models.empty()) throw ArgumentError("ensemble_loss_gradient: empty model list");
  const std::vector<double> a = detail::resolve_alpha(alpha, models.size());
  for (const auto* m : models)
    if (!(m->feature_config() == models.front()->feature_config()))
      throw ArgumentError("ensemble_loss_gradient: models must share one feature config");

  const MelFrontEnd& fe = models.front()->frontend();
  MelFrontEnd::Workspace ws;
  fe.forward(clip.samples, ws);

  std::vector<Eigen::VectorXd> logits(models.size());
  for (std::size_t k = 0; k < models.size(); ++k)
    logits[k] = models[k]->logits_from_features(ws.features);
  if (per_model_loss != nullptr) {
    per_model_loss->resize(models.size());
    for (std::size_t k = 0; k < models.size(); ++k)
      (*per_model_loss)[k] = cross_entropy(logits[k], target);
  }

  std::vector<Eigen::VectorXd> d_logits(models.size());
  double loss = 0;
  switch (level) {
    case EnsembleLevel::Loss: {
      for (std::size_t k = 0; k < models.size(); ++k) {
        loss += a[k] * cross_entropy(logits[k], target);
        d_logits[k] = a[k] * softmax(logits[k]);
        d_logits[k][target] -= a[k];
      }
      break;
    }
    case EnsembleLevel::Logits: {
      Eigen::VectorXd z = Eigen::VectorXd::Zero(models.front()->num_classes());
      for (std::size_t k = 0; k < models.size(); ++k) z += a[k] * logits[k];
      loss = cross_entropy(z, target);
      Eigen::VectorXd dz = softmax(z);
      dz[target] -= 1.0;
      for (std::size_t k = 0; k < models.size(); ++k) d_logits[k] = a[k] * dz;
      break;
    }
    case EnsembleLevel::Predictions: {
      std::vector<Eigen::VectorXd> probs(models.size());
      double s = 0;
      for (std::size_t k = 0; k < models.size(); ++k) {
        probs[k] = softmax(logits[k]);
        s += a[k] * probs[k][target];
      }
      loss = -std::log(s);
      for (std::size_t k = 0; k < models.size(); ++k) {
        const double d_pt = -a[k] / s;
        // Row `target` of the softmax Jacobian.
        d_logits[k] = (-d_pt * probs[k][target]) * probs[k];
        d_logits[k][target] += d_pt * probs[k][target];
      }
      break;
    }
  }
  if (loss_out != nullptr) *loss_out = loss;

  Eigen::MatrixXd d_feat = models.front()->feature_gradient(ws.features, d_logits[0]);
  for (std::size_t k = 1; k < models.size(); ++k)
    d_feat += models[k]->feature_gradient(ws.features, d_logits[k]);
  return fe.backprop(ws, d_feat, clip.samples.size());
}

struct IterationLog {
  int iteration = 0;
  std::vector<double> model_losses;  // mean loss over smoothing rounds, per model
  std::vector<double> grad_norms;    // ||g_tk||_2 after momentum, per model
  int rge_index = -1;
  std::vector<double> dgwe_weights;
  bool weight_underflow = false;
  double max_deviation = 0.0;  // L-inf distance from the carrier after the update
};

struct ProbeRecord {
  int iteration = 0;
  int target_index = 0;
  std::string target_name;
  int label = 0;
};

struct AttackResult {
  AudioClip adversarial;
  int command = 0;        // intended target class
  int carrier_index = -1; // position within a batch fixture, if any
  std::string strategy;
  std::string config_hash;
  std::vector<IterationLog> iterations;
  std::vector<ProbeRecord> probes;
  std::vector<bool> whitebox_success;  // per surrogate, on the final iterate
  std::uint64_t queries_used = 0;
  double final_linf = 0.0;
  double final_l2 = 0.0;
  int stopped_at = -1;  // iteration index of an early stop, -1 if none

  bool all_whitebox_fooled() const {
    if (whitebox_success.empty()) return false;
    for (bool b : whitebox_success)
      if (!b) return false;
    return true;
  }
};

// The outer loop. `models` are the gradient surrogates (exactly one for the
// single-model strategies); `probe_targets` are queried every
// cfg.query_every iterations and never influence the optimization unless
// stop_on_probe_success is set.
inline AttackResult run_attack(const std::vector<const SurrogateModel*>& models,
                               const AudioClip& carrier, int target, const AttackConfig& cfg,
                               const std::vector<const BlackBoxTarget*>& probe_targets = {}) {
  cfg.validate();
  if (models.empty()) throw ArgumentError("run_attack: empty model list");
  for (const auto* m : models) {
    if (m == nullptr) throw ArgumentError("run_attack: null model");
    if (!m->trained()) throw ArgumentError("run_attack: model is untrained");
    if (target < 0 || target >= m->num_classes())
      throw ArgumentError("run_attack: target class out of range");
  }
  const bool single_model_strategy = cfg.strategy == Strategy::Single ||
                                     cfg.strategy == Strategy::SelfEnsemble ||
                                     cfg.strategy == Strategy::ScaleInvariant;
  if (single_model_strategy && models.size() != 1)
    throw ArgumentError(std::string("run_attack: strategy '") + strategy_name(cfg.strategy) +
                        "' takes exactly one model");
  const std::vector<double> alpha =
      cfg.strategy == Strategy::LossEnsemble ? detail::resolve_alpha(cfg.alpha, models.size())
                                             : std::vector<double>{};

  const std::size_t len = carrier.samples.size();
  // One momentum/normalization stream per smoothed gradient; RGE/DGWE keep
  // one per model, the combined-objective strategies keep one in total.
  const std::size_t streams =
      (cfg.strategy == Strategy::Rge || cfg.strategy == Strategy::Dgwe) ? models.size() : 1;

  SmoothingConfig smoothing;
  smoothing.rounds = cfg.smoothing_rounds;
  smoothing.noise_amplitude = cfg.noise_amplitude;
  smoothing.dropout_p =
      (cfg.strategy == Strategy::Single || cfg.strategy == Strategy::ScaleInvariant)
          ? 0.0
          : cfg.dropout_p;
  smoothing.mask_per_round = cfg.mask_per_round;
  if (cfg.strategy == Strategy::ScaleInvariant) smoothing.noise_amplitude = 0.0;

  Rng rng_smooth(derive_seed(cfg.seed, 0xA1));
  Rng rng_strategy(derive_seed(cfg.seed, 0xB2));

  AttackResult result;
  result.command = target;
  result.strategy = strategy_name(cfg.strategy);
  result.config_hash = config_hash(cfg);
  result.adversarial = carrier;
  result.adversarial.label.reset();

  std::vector<GradientVector> g_prev(
      streams, GradientVector::Zero(static_cast<Eigen::Index>(len)));
  AdamState adam(len, cfg.lr);

  for (int t = 0; t < cfg.iterations; ++t) {
    IterationLog log;
    log.iteration = t;

    std::vector<GradientVector> g_t(streams);
    if (cfg.strategy == Strategy::ScaleInvariant) {
      double mean_loss = 0.0;
      GradientVector g =
          scale_invariant_gradient(*models[0], result.adversarial, target, cfg.scale_copies,
                                   &mean_loss);
      log.model_losses.push_back(mean_loss);
      g_t[0] = momentum_accumulate(g_prev[0], normalize_gradient(g), cfg.momentum);
    } else if (cfg.strategy == Strategy::LossEnsemble) {
      const SmoothingDraws draws = draw_smoothing(smoothing, len, rng_smooth);
      GradientVector acc;
      std::vector<double> loss_sums(models.size(), 0.0);
      AudioClip perturbed = result.adversarial;
      for (int m = 0; m < draws.rounds; ++m) {
        const Eigen::VectorXd* mask = draws.mask_for(m);
        const Eigen::VectorXd* noise = draws.noise_for(m);
        perturbed.samples = result.adversarial.samples;
        for (std::size_t i = 0; i < len; ++i) {
          double s = perturbed.samples[i];
          if (mask != nullptr) s *= (*mask)[static_cast<Eigen::Index>(i)];
          if (noise != nullptr) s += (*noise)[static_cast<Eigen::Index>(i)];
          perturbed.samples[i] = s;
        }
        std::vector<double> round_losses;
        GradientVector g = ensemble_loss_gradient(cfg.ensemble_level, alpha, models, perturbed,
                                                  target, nullptr, &round_losses);
        if (mask != nullptr) g.array() *= mask->array();
        for (std::size_t k = 0; k < models.size(); ++k) loss_sums[k] += round_losses[k];
        if (m == 0)
          acc = std::move(g);
        else
          acc += g;
      }
      for (double s : loss_sums) log.model_losses.push_back(s / draws.rounds);
      g_t[0] = momentum_accumulate(g_prev[0], normalize_gradient(acc), cfg.momentum);
    } else {
      const SmoothingDraws draws = draw_smoothing(smoothing, len, rng_smooth);
      for (std::size_t k = 0; k < streams; ++k) {
        double mean_loss = 0.0;
        GradientVector g =
            smoothed_gradient_sum(*models[k], result.adversarial, target, draws, &mean_loss);
        log.model_losses.push_back(mean_loss);
        g_t[k] = momentum_accumulate(g_prev[k], normalize_gradient(g), cfg.momentum);
      }
    }
    g_prev = g_t;
    for (const GradientVector& g : g_t) log.grad_norms.push_back(g.norm());

    GradientVector g_ens;
    if (cfg.strategy == Strategy::Rge || cfg.strategy == Strategy::Dgwe) {
      EnsembleChoice choice = ensemble_gradient(cfg.strategy, g_t, cfg.sigma, rng_strategy);
      log.rge_index = choice.rge_index;
      log.dgwe_weights = choice.weights;
      log.weight_underflow = choice.weight_underflow;
      g_ens = std::move(choice.gradient);
    } else {
      g_ens = std::move(g_t[0]);
    }

    if (!g_ens.allFinite())
      throw NumericError("run_attack: non-finite ensemble gradient at iteration " +
                         std::to_string(t));
    Eigen::VectorXd update;
    try {
      update = adam.step(g_ens);
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " at iteration " + std::to_string(t));
    }
    for (std::size_t i = 0; i < len; ++i)
      result.adversarial.samples[i] -= update[static_cast<Eigen::Index>(i)];
    result.adversarial = clip_perturbation(result.adversarial, carrier, cfg.epsilon);

    double max_dev = 0.0;
    for (std::size_t i = 0; i < len; ++i)
      max_dev = std::max(max_dev, std::abs(result.adversarial.samples[i] - carrier.samples[i]));
    log.max_deviation = max_dev;
    result.iterations.push_back(std::move(log));

    if (!probe_targets.empty() && (t + 1) % cfg.query_every == 0) {
      bool all_hit = true;
      for (std::size_t p = 0; p < probe_targets.size(); ++p) {
        const int label = probe_targets[p]->query(result.adversarial);
        ++result.queries_used;
        result.probes.push_back({t, static_cast<int>(p), probe_targets[p]->name(), label});
        all_hit = all_hit && label == target;
      }
      if (cfg.stop_on_probe_success && all_hit) {
        result.stopped_at = t;
        break;
      }
    }
    if (cfg.stop_on_whitebox_success) {
      bool all = true;
      for (const auto* m : models) all = all && m->predict(result.adversarial) == target;
      if (all) {
        result.stopped_at = t;
        break;
      }
    }
  }

  result.whitebox_success.reserve(models.size());
  for (const auto* m : models)
    result.whitebox_success.push_back(m->predict(result.adversarial) == target);
  double l2 = 0.0, linf = 0.0;
  for (std::size_t i = 0; i < len; ++i) {
    const double d = result.adversarial.samples[i] - carrier.samples[i];
    l2 += d * d;
    linf = std::max(linf, std::abs(d));
  }
  result.final_l2 = std::sqrt(l2);
  result.final_linf = linf;
  return result;
}

// Dropout self-ensemble on one model: the mask is applied to the iterate
// before each gradient, which is the SelfEnsemble strategy of run_attack.
inline AttackResult self_ensemble_attack(const SurrogateModel& model, const AudioClip& carrier,
                                         int target, const AttackConfig& cfg) {
  AttackConfig c = cfg;
  c.strategy = Strategy::SelfEnsemble;
  return run_attack({&model}, carrier, target, c);
}

inline nlohmann::json to_json(const AttackResult& r, const AttackConfig& cfg,
                              bool include_trajectory = true) {
  nlohmann::json j;
  j["version"] = kToolVersion;
  j["config"] = to_json(cfg);
  j["config_hash"] = r.config_hash;
  j["strategy"] = r.strategy;
  j["command"] = r.command;
  j["carrier_index"] = r.carrier_index;
  j["whitebox_success"] = r.whitebox_success;
  j["all_whitebox_fooled"] = r.all_whitebox_fooled();
  j["queries_used"] = r.queries_used;
  j["final_linf"] = r.final_linf;
  j["final_l2"] = r.final_l2;
  j["stopped_at"] = r.stopped_at;
  nlohmann::json probes = nlohmann::json::array();
  for (const ProbeRecord& p : r.probes)
    probes.push_back({{"iteration", p.iteration},
                      {"target_index", p.target_index},
                      {"target", p.target_name},
                      {"label", p.label}});
  j["probes"] = probes;
  if (include_trajectory) {
    nlohmann::json iters = nlohmann::json::array();
    for (const IterationLog& it : r.iterations) {
      nlohmann::json e{{"iteration", it.iteration},
                       {"model_losses", it.model_losses},
                       {"grad_norms", it.grad_norms},
                       {"max_deviation", it.max_deviation}};
      if (it.rge_index >= 0) e["rge_index"] = it.rge_index;
      if (!it.dgwe_weights.empty()) {
        e["dgwe_weights"] = it.dgwe_weights;
        e["weight_underflow"] = it.weight_underflow;
      }
      iters.push_back(std::move(e));
    }
    j["iterations"] = iters;
  }
  return j;
}

}  // namespace eadv
