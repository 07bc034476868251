#pragma once

// Differentiable audio-command classifiers. Three deliberately dissimilar
// heads (linear on pooled features, tanh MLP, 1-D convolution over frames)
// sit on the shared log-mel front-end; gradients w.r.t. the waveform are
// computed analytically through head, pooling, and front-end.

#include <Eigen/Dense>
#include <atomic>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "eadv/common.hpp"
#include "eadv/dataset.hpp"
#include "eadv/features.hpp"
#include "eadv/optim.hpp"

namespace eadv {

enum class Arch { MeanpoolLinear, Mlp, Conv1d };

inline const char* arch_name(Arch a) {
  switch (a) {
    case Arch::MeanpoolLinear: return "meanpool_linear";
    case Arch::Mlp: return "mlp";
    case Arch::Conv1d: return "conv1d";
  }
  throw ArgumentError("arch_name: unknown architecture tag");
}

inline Arch arch_from_name(const std::string& name) {
  if (name == "meanpool_linear") return Arch::MeanpoolLinear;
  if (name == "mlp") return Arch::Mlp;
  if (name == "conv1d") return Arch::Conv1d;
  throw ArgumentError("unknown architecture '" + name + "'");
}

inline Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  const Eigen::ArrayXd shifted = logits.array() - logits.maxCoeff();
  const Eigen::ArrayXd e = shifted.exp();
  return (e / e.sum()).matrix();
}

// -log softmax(logits)[target], computed in log-sum-exp form.
inline double cross_entropy(const Eigen::VectorXd& logits, int target) {
  if (target < 0 || target >= logits.size())
    throw ArgumentError("cross_entropy: target out of range");
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  return lse - logits[target];
}

// Named view into a model's flat parameter vector, used by checkpoints.
struct TensorSpec {
  std::string name;
  std::vector<std::uint64_t> dims;
  std::size_t offset = 0;
  std::size_t size = 0;
};

class SurrogateModel {
 public:
  static constexpr int kMlpHidden = 64;
  static constexpr int kConvChannels = 8;
  static constexpr int kConvWidth = 5;

  SurrogateModel(Arch arch, int num_classes, FeatureConfig feature_config = {})
      : arch_(arch), num_classes_(num_classes), feature_config_(feature_config) {
    if (num_classes < 2) throw ArgumentError("SurrogateModel: need at least 2 classes");
    const std::size_t b = static_cast<std::size_t>(feature_config_.mel_bins);
    const std::size_t k = static_cast<std::size_t>(num_classes_);
    switch (arch_) {
      case Arch::MeanpoolLinear:
        add_tensor("linear.weight", {k, b});
        add_tensor("linear.bias", {k});
        break;
      case Arch::Mlp:
        add_tensor("hidden.weight", {kMlpHidden, b});
        add_tensor("hidden.bias", {kMlpHidden});
        add_tensor("out.weight", {k, kMlpHidden});
        add_tensor("out.bias", {k});
        break;
      case Arch::Conv1d:
        add_tensor("conv.kernel", {kConvChannels, b, kConvWidth});
        add_tensor("conv.bias", {kConvChannels});
        add_tensor("head.weight", {k, kConvChannels});
        add_tensor("head.bias", {k});
        break;
    }
    params_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(param_count_));
  }

  Arch arch() const { return arch_; }
  int num_classes() const { return num_classes_; }
  const FeatureConfig& feature_config() const { return feature_config_; }
  const MelFrontEnd& frontend() const { return frontend_for(feature_config_); }
  const std::vector<TensorSpec>& tensors() const { return tensors_; }
  Eigen::VectorXd& params() { return params_; }
  const Eigen::VectorXd& params() const { return params_; }
  bool trained() const { return trained_; }
  void mark_trained(double accuracy = std::numeric_limits<double>::quiet_NaN()) {
    trained_ = true;
    train_accuracy_ = accuracy;
  }
  double train_accuracy() const { return train_accuracy_; }

  // Xavier-uniform weights, zero biases.
  void init_params(Rng& rng) {
    for (const TensorSpec& t : tensors_) {
      double* data = params_.data() + t.offset;
      if (t.dims.size() == 1) {
        for (std::size_t i = 0; i < t.size; ++i) data[i] = 0.0;
        continue;
      }
      const double fan_in = static_cast<double>(
          std::accumulate(t.dims.begin() + 1, t.dims.end(), std::uint64_t{1},
                          std::multiplies<>()));
      const double fan_out = static_cast<double>(t.dims[0]);
      const double bound = std::sqrt(6.0 / (fan_in + fan_out));
      for (std::size_t i = 0; i < t.size; ++i) data[i] = rng.uniform(-bound, bound);
    }
  }

  Eigen::VectorXd logits_from_features(const FeatureMatrix& feat) const {
    check_features(feat);
    switch (arch_) {
      case Arch::MeanpoolLinear: {
        const Eigen::VectorXd mean = feat.values.colwise().mean();
        return weight("linear.weight") * mean + vec("linear.bias");
      }
      case Arch::Mlp: {
        const Eigen::VectorXd mean = feat.values.colwise().mean();
        const Eigen::VectorXd h =
            (weight("hidden.weight") * mean + vec("hidden.bias")).array().tanh().matrix();
        return weight("out.weight") * h + vec("out.bias");
      }
      case Arch::Conv1d: {
        const Eigen::VectorXd pooled = conv_pooled(feat);
        return weight("head.weight") * pooled + vec("head.bias");
      }
    }
    throw ArgumentError("logits_from_features: unknown architecture");
  }

  Eigen::VectorXd logits(const AudioClip& clip) const {
    return logits_from_features(frontend().features(clip));
  }

  int predict(const AudioClip& clip) const {
    Eigen::Index best;
    logits(clip).maxCoeff(&best);
    return static_cast<int>(best);
  }

  double loss(const AudioClip& clip, int target) const {
    return cross_entropy(logits(clip), target);
  }

  // dL/dfeatures for a given dL/dlogits (head + pooling backward).
  Eigen::MatrixXd feature_gradient(const FeatureMatrix& feat,
                                   const Eigen::VectorXd& d_logits) const {
    check_features(feat);
    const Eigen::Index f_count = feat.frames();
    Eigen::MatrixXd d_feat = Eigen::MatrixXd::Zero(f_count, feature_config_.mel_bins);
    switch (arch_) {
      case Arch::MeanpoolLinear: {
        const Eigen::VectorXd d_mean = weight("linear.weight").transpose() * d_logits;
        d_feat.rowwise() = (d_mean / static_cast<double>(f_count)).transpose();
        break;
      }
      case Arch::Mlp: {
        const Eigen::VectorXd mean = feat.values.colwise().mean();
        const Eigen::VectorXd pre = weight("hidden.weight") * mean + vec("hidden.bias");
        const Eigen::ArrayXd h = pre.array().tanh();
        const Eigen::VectorXd d_h =
            ((weight("out.weight").transpose() * d_logits).array() * (1.0 - h.square())).matrix();
        const Eigen::VectorXd d_mean = weight("hidden.weight").transpose() * d_h;
        d_feat.rowwise() = (d_mean / static_cast<double>(f_count)).transpose();
        break;
      }
      case Arch::Conv1d: {
        const Eigen::Index out_frames = f_count - kConvWidth + 1;
        const Eigen::VectorXd d_pooled = weight("head.weight").transpose() * d_logits;
        const Eigen::VectorXd d_out = d_pooled / static_cast<double>(out_frames);
        const double* ker = params_.data() + tensor("conv.kernel").offset;
        const int b = feature_config_.mel_bins;
        for (int c = 0; c < kConvChannels; ++c) {
          const double dc = d_out[c];
          for (int bin = 0; bin < b; ++bin) {
            for (int w = 0; w < kConvWidth; ++w) {
              const double kv = dc * ker[(c * b + bin) * kConvWidth + w];
              for (Eigen::Index f = 0; f < out_frames; ++f) d_feat(f + w, bin) += kv;
            }
          }
        }
        break;
      }
    }
    return d_feat;
  }

  // dL/dparams for a given dL/dlogits, flattened to the parameter layout.
  Eigen::VectorXd param_gradient(const FeatureMatrix& feat, const Eigen::VectorXd& d_logits) const {
    check_features(feat);
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(params_.size());
    switch (arch_) {
      case Arch::MeanpoolLinear: {
        const Eigen::VectorXd mean = feat.values.colwise().mean();
        tensor_block(grad, "linear.weight") = flatten(d_logits * mean.transpose());
        tensor_block(grad, "linear.bias") = d_logits;
        break;
      }
      case Arch::Mlp: {
        const Eigen::VectorXd mean = feat.values.colwise().mean();
        const Eigen::VectorXd pre = weight("hidden.weight") * mean + vec("hidden.bias");
        const Eigen::ArrayXd h = pre.array().tanh();
        const Eigen::VectorXd d_h =
            ((weight("out.weight").transpose() * d_logits).array() * (1.0 - h.square())).matrix();
        tensor_block(grad, "out.weight") = flatten(d_logits * h.matrix().transpose());
        tensor_block(grad, "out.bias") = d_logits;
        tensor_block(grad, "hidden.weight") = flatten(d_h * mean.transpose());
        tensor_block(grad, "hidden.bias") = d_h;
        break;
      }
      case Arch::Conv1d: {
        const Eigen::Index f_count = feat.frames();
        const Eigen::Index out_frames = f_count - kConvWidth + 1;
        const Eigen::VectorXd pooled = conv_pooled(feat);
        tensor_block(grad, "head.weight") = flatten(d_logits * pooled.transpose());
        tensor_block(grad, "head.bias") = d_logits;
        const Eigen::VectorXd d_pooled = weight("head.weight").transpose() * d_logits;
        const Eigen::VectorXd d_out = d_pooled / static_cast<double>(out_frames);
        const int b = feature_config_.mel_bins;
        const TensorSpec& kt = tensor("conv.kernel");
        // d_out is constant over output frames, so the kernel gradient only
        // needs the window-summed features.
        Eigen::MatrixXd win_sum = Eigen::MatrixXd::Zero(b, kConvWidth);
        for (int w = 0; w < kConvWidth; ++w)
          win_sum.col(w) = feat.values.middleRows(w, out_frames).colwise().sum().transpose();
        for (int c = 0; c < kConvChannels; ++c)
          for (int bin = 0; bin < b; ++bin)
            for (int w = 0; w < kConvWidth; ++w)
              grad[static_cast<Eigen::Index>(kt.offset + (c * b + bin) * kConvWidth + w)] =
                  d_out[c] * win_sum(bin, w);
        tensor_block(grad, "conv.bias") = d_pooled;
        break;
      }
    }
    return grad;
  }

  // Analytic dloss/dsamples via head backward + front-end adjoint.
  Eigen::VectorXd input_gradient(const AudioClip& clip, int target,
                                 double* loss_out = nullptr) const {
    const MelFrontEnd& fe = frontend();
    MelFrontEnd::Workspace ws;
    fe.forward(clip.samples, ws);
    const Eigen::VectorXd z = logits_from_features(ws.features);
    if (loss_out != nullptr) *loss_out = cross_entropy(z, target);
    else if (target < 0 || target >= z.size())
      throw ArgumentError("input_gradient: target out of range");
    Eigen::VectorXd d_logits = softmax(z);
    d_logits[target] -= 1.0;
    return fe.backprop(ws, feature_gradient(ws.features, d_logits), clip.samples.size());
  }

 private:
  void add_tensor(const std::string& name, std::vector<std::uint64_t> dims) {
    TensorSpec t;
    t.name = name;
    t.dims = std::move(dims);
    t.offset = param_count_;
    t.size = 1;
    for (std::uint64_t d : t.dims) t.size *= static_cast<std::size_t>(d);
    param_count_ += t.size;
    tensors_.push_back(std::move(t));
  }

  const TensorSpec& tensor(const char* name) const {
    for (const TensorSpec& t : tensors_)
      if (t.name == name) return t;
    throw ArgumentError(std::string("unknown tensor '") + name + "'");
  }

  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
  weight(const char* name) const {
    const TensorSpec& t = tensor(name);
    return {params_.data() + t.offset, static_cast<Eigen::Index>(t.dims[0]),
            static_cast<Eigen::Index>(t.size / t.dims[0])};
  }

  Eigen::Map<const Eigen::VectorXd> vec(const char* name) const {
    const TensorSpec& t = tensor(name);
    return {params_.data() + t.offset, static_cast<Eigen::Index>(t.size)};
  }

  Eigen::VectorBlock<Eigen::VectorXd> tensor_block(Eigen::VectorXd& v, const char* name) const {
    const TensorSpec& t = tensor(name);
    return v.segment(static_cast<Eigen::Index>(t.offset), static_cast<Eigen::Index>(t.size));
  }

  static Eigen::VectorXd flatten(const Eigen::MatrixXd& m) {
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
    return Eigen::Map<const Eigen::VectorXd>(rm.data(), rm.size());
  }

  Eigen::VectorXd conv_pooled(const FeatureMatrix& feat) const {
    const Eigen::Index f_count = feat.frames();
    const Eigen::Index out_frames = f_count - kConvWidth + 1;
    const int b = feature_config_.mel_bins;
    const double* ker = params_.data() + tensor("conv.kernel").offset;
    const auto bias = vec("conv.bias");
    Eigen::VectorXd pooled(kConvChannels);
    for (int c = 0; c < kConvChannels; ++c) {
      double acc = 0.0;
      for (int bin = 0; bin < b; ++bin) {
        const double* kc = ker + (c * b + bin) * kConvWidth;
        for (int w = 0; w < kConvWidth; ++w)
          acc += kc[w] * feat.values.col(bin).segment(w, out_frames).sum();
      }
      pooled[c] = acc / static_cast<double>(out_frames) + bias[c];
    }
    return pooled;
  }

  void check_features(const FeatureMatrix& feat) const {
    if (feat.bins() != feature_config_.mel_bins)
      throw ArgumentError("features have " + std::to_string(feat.bins()) + " bins, model expects " +
                          std::to_string(feature_config_.mel_bins));
    if (feat.frames() < 1) throw ArgumentError("empty feature matrix");
    if (arch_ == Arch::Conv1d && feat.frames() < kConvWidth)
      throw ArgumentError("conv1d needs at least " + std::to_string(kConvWidth) +
                          " feature frames, got " + std::to_string(feat.frames()));
  }

  Arch arch_;
  int num_classes_;
  FeatureConfig feature_config_;
  std::vector<TensorSpec> tensors_;
  std::size_t param_count_ = 0;
  Eigen::VectorXd params_;
  bool trained_ = false;
  double train_accuracy_ = std::numeric_limits<double>::quiet_NaN();
};

// ---- checkpoints ----------------------------------------------------------
//
// Binary format: magic "EADV", version u32, arch tag (length-prefixed name),
// class count u32, tensor count u32, then per tensor: length-prefixed name,
// ndims u32, dims u64[], row-major f64 data. All fields little-endian.

namespace detail {

inline void wr_bytes(std::ofstream& out, const void* p, std::size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <typename T>
inline void wr_le(std::ofstream& out, T v) {
  unsigned char buf[sizeof(T)];
  std::uint64_t u = 0;
  std::memcpy(&u, &v, sizeof(T));
  for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xff);
  wr_bytes(out, buf, sizeof(T));
}

inline void wr_string(std::ofstream& out, const std::string& s) {
  wr_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  wr_bytes(out, s.data(), s.size());
}

template <typename T>
inline T rd_le(std::ifstream& in) {
  unsigned char buf[sizeof(T)];
  in.read(reinterpret_cast<char*>(buf), sizeof(T));
  if (!in) throw FormatError("checkpoint truncated");
  std::uint64_t u = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) u |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  T v;
  std::memcpy(&v, &u, sizeof(T));
  return v;
}

inline std::string rd_string(std::ifstream& in) {
  const std::uint32_t len = rd_le<std::uint32_t>(in);
  if (len > 4096) throw FormatError("checkpoint string field too long");
  std::string s(len, '\0');
  in.read(s.data(), len);
  if (!in) throw FormatError("checkpoint truncated");
  return s;
}

}  // namespace detail

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const SurrogateModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("save_checkpoint: cannot open '" + path + "'");
  detail::wr_bytes(out, "EADV", 4);
  detail::wr_le<std::uint32_t>(out, kCheckpointVersion);
  detail::wr_string(out, arch_name(model.arch()));
  detail::wr_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.num_classes()));
  detail::wr_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.tensors().size()));
  for (const TensorSpec& t : model.tensors()) {
    detail::wr_string(out, t.name);
    detail::wr_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.dims.size()));
    for (std::uint64_t d : t.dims) detail::wr_le<std::uint64_t>(out, d);
    const double* data = model.params().data() + t.offset;
    for (std::size_t i = 0; i < t.size; ++i) detail::wr_le<double>(out, data[i]);
  }
  if (!out) throw IoError("save_checkpoint: write failure on '" + path + "'");
}

inline SurrogateModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_checkpoint: cannot open '" + path + "'");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "EADV", 4) != 0)
    throw FormatError("load_checkpoint: '" + path + "': bad magic (expected 'EADV')");
  const std::uint32_t version = detail::rd_le<std::uint32_t>(in);
  if (version != kCheckpointVersion)
    throw FormatError("load_checkpoint: '" + path + "': unsupported version " +
                      std::to_string(version));
  const Arch arch = arch_from_name(detail::rd_string(in));
  const int k = static_cast<int>(detail::rd_le<std::uint32_t>(in));
  SurrogateModel model(arch, k);
  const std::uint32_t n_tensors = detail::rd_le<std::uint32_t>(in);
  if (n_tensors != model.tensors().size())
    throw FormatError("load_checkpoint: '" + path + "': tensor count mismatch");
  for (const TensorSpec& expected : model.tensors()) {
    const std::string name = detail::rd_string(in);
    if (name != expected.name)
      throw FormatError("load_checkpoint: '" + path + "': tensor '" + name + "', expected '" +
                        expected.name + "'");
    const std::uint32_t ndims = detail::rd_le<std::uint32_t>(in);
    if (ndims != expected.dims.size())
      throw FormatError("load_checkpoint: '" + path + "': rank mismatch on '" + name + "'");
    for (std::size_t i = 0; i < ndims; ++i)
      if (detail::rd_le<std::uint64_t>(in) != expected.dims[i])
        throw FormatError("load_checkpoint: '" + path + "': shape mismatch on '" + name + "'");
    double* data = model.params().data() + expected.offset;
    for (std::size_t i = 0; i < expected.size; ++i) data[i] = detail::rd_le<double>(in);
  }
  model.mark_trained();
  return model;
}

// ---- training ---------------------------------------------------------------

struct TrainOptions {
  double lr = 1e-3;
  int batch_size = 8;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int max_epochs = 200;
  double target_accuracy = 0.95;
  double min_accuracy = 0.80;  // below this after max_epochs => diverged
};

inline SurrogateModel train_model(Arch arch, const CommandDataset& ds, std::uint64_t train_seed,
                                  FeatureConfig fc = {}, const TrainOptions& opts = {}) {
  if (ds.clips.empty()) throw ArgumentError("train_model: empty dataset");
  SurrogateModel model(arch, ds.num_classes, fc);
  Rng rng(train_seed);
  model.init_params(rng);

  const MelFrontEnd& fe = frontend_for(fc);
  std::vector<FeatureMatrix> features;
  features.reserve(ds.clips.size());
  for (const AudioClip& clip : ds.clips) features.push_back(fe.features(clip));

  AdamState adam(static_cast<std::size_t>(model.params().size()), opts.lr, opts.beta1, opts.beta2,
                 opts.adam_eps);
  std::vector<std::size_t> order(ds.clips.size());
  std::iota(order.begin(), order.end(), 0);

  auto accuracy = [&] {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < features.size(); ++i) {
      Eigen::Index best;
      model.logits_from_features(features[i]).maxCoeff(&best);
      if (static_cast<int>(best) == ds.labels[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(features.size());
  };

  double acc = accuracy();
  int epoch = 0;
  for (; epoch < opts.max_epochs && acc < opts.target_accuracy; ++epoch) {
    // Fisher-Yates via the training rng so runs are reproducible.
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng.uniform_index(i)]);
    for (std::size_t start = 0; start < order.size(); start += opts.batch_size) {
      const std::size_t end = std::min(order.size(), start + opts.batch_size);
      Eigen::VectorXd grad = Eigen::VectorXd::Zero(model.params().size());
      for (std::size_t i = start; i < end; ++i) {
        const std::size_t idx = order[i];
        Eigen::VectorXd d_logits = softmax(model.logits_from_features(features[idx]));
        d_logits[ds.labels[idx]] -= 1.0;
        grad += model.param_gradient(features[idx], d_logits);
      }
      grad /= static_cast<double>(end - start);
      model.params() -= adam.step(grad);
    }
    acc = accuracy();
    EADV_LOG_DEBUG("train %s epoch %d acc %.3f", arch_name(arch), epoch + 1, acc);
  }

  if (acc < opts.min_accuracy)
    throw TrainingDivergedError(std::string("training diverged: ") + arch_name(arch) +
                                " reached only " + std::to_string(acc) + " train accuracy");
  model.mark_trained(acc);
  EADV_LOG_INFO("trained %s: accuracy %.3f after %d epochs", arch_name(arch), acc, epoch);
  return model;
}

inline std::vector<SurrogateModel> train_surrogates(const CommandDataset& ds,
                                                    const std::vector<Arch>& archs,
                                                    std::uint64_t train_seed,
                                                    FeatureConfig fc = {},
                                                    const TrainOptions& opts = {}) {
  std::vector<SurrogateModel> models;
  models.reserve(archs.size());
  for (std::size_t i = 0; i < archs.size(); ++i)
    models.push_back(train_model(archs[i], ds, derive_seed(train_seed, i), fc, opts));
  return models;
}

// Held-out model behind a label-only query interface. Logits and gradients
// are unreachable by construction; only the top-1 class id crosses.
class BlackBoxTarget {
 public:
  BlackBoxTarget(SurrogateModel model, std::string name)
      : model_(std::move(model)), name_(std::move(name)) {}

  BlackBoxTarget(const BlackBoxTarget& other)
      : model_(other.model_), name_(other.name_), queries_(other.queries_.load()) {}

  int query(const AudioClip& clip) const {
    queries_.fetch_add(1, std::memory_order_relaxed);
    return model_.predict(clip);
  }

  std::uint64_t queries() const { return queries_.load(std::memory_order_relaxed); }
  const std::string& name() const { return name_; }
  bool trained() const { return model_.trained(); }
  int num_classes() const { return model_.num_classes(); }

 private:
  SurrogateModel model_;
  std::string name_;
  mutable std::atomic<std::uint64_t> queries_{0};
};

}  // namespace eadv
