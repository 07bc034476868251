#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "eadv/model.hpp"
#include "fixture.hpp"

using namespace eadv;
namespace fs = std::filesystem;

namespace {

AudioClip random_clip(std::size_t n, std::uint64_t seed) {
  AudioClip clip;
  clip.samples.resize(n);
  Rng rng(seed);
  for (double& s : clip.samples) s = rng.uniform(-0.6, 0.6);
  return clip;
}

}  // namespace

TEST_CASE("softmax sums to one for every architecture and input") {
  const auto& fix = testfix::fixture();
  for (const SurrogateModel& model : fix.surrogates) {
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
      const Eigen::VectorXd p = softmax(model.logits(random_clip(8000, seed)));
      REQUIRE(std::abs(p.sum() - 1.0) < 1e-9);
      REQUIRE(p.minCoeff() >= 0.0);
    }
  }
}

TEST_CASE("zero-parameter model gives zero logits and uniform softmax") {
  for (Arch arch : {Arch::MeanpoolLinear, Arch::Mlp, Arch::Conv1d}) {
    const SurrogateModel model(arch, 4);
    const Eigen::VectorXd z = model.logits(random_clip(8000, 5));
    REQUIRE(z.norm() == 0.0);
    const Eigen::VectorXd p = softmax(z);
    for (Eigen::Index i = 0; i < p.size(); ++i) REQUIRE(p[i] == Catch::Approx(0.25).margin(1e-12));
  }
}

TEST_CASE("softmax is invariant to constant logit shifts") {
  Eigen::VectorXd z(4);
  z << 0.3, -1.2, 2.0, 0.1;
  const Eigen::VectorXd p1 = softmax(z);
  const Eigen::VectorXd p2 = softmax((z.array() + 17.5).matrix());
  for (Eigen::Index i = 0; i < 4; ++i) REQUIRE(p1[i] == Catch::Approx(p2[i]).margin(1e-12));
}

TEST_CASE("cross entropy basics") {
  Eigen::VectorXd uniform = Eigen::VectorXd::Zero(4);
  REQUIRE(cross_entropy(uniform, 2) == Catch::Approx(std::log(4.0)).margin(1e-12));

  Eigen::VectorXd hot = Eigen::VectorXd::Zero(4);
  hot[1] = 1e3;
  REQUIRE(cross_entropy(hot, 1) < 1e-6);

  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd z(4);
    for (int i = 0; i < 4; ++i) z[i] = rng.uniform(-5, 5);
    REQUIRE(cross_entropy(z, static_cast<int>(rng.uniform_index(4))) >= 0.0);
  }
  REQUIRE_THROWS_AS(cross_entropy(uniform, 4), ArgumentError);
}

TEST_CASE("trained surrogates fit their training set") {
  const auto& fix = testfix::fixture();
  for (const SurrogateModel& model : fix.surrogates) {
    REQUIRE(model.trained());
    std::size_t hits = 0;
    for (std::size_t i = 0; i < fix.dataset.clips.size(); ++i)
      if (model.predict(fix.dataset.clips[i]) == fix.dataset.labels[i]) ++hits;
    REQUIRE(static_cast<double>(hits) / fix.dataset.clips.size() >= 0.95);
  }
}

TEST_CASE("input gradient matches central finite differences for every architecture") {
  const auto& fix = testfix::fixture();
  const double h = 1e-4;
  for (const SurrogateModel& model : fix.surrogates) {
    const AudioClip clip = random_clip(4800, 99);  // ~28 feature frames
    const int target = 2;
    const Eigen::VectorXd analytic = model.input_gradient(clip, target);
    Rng rng(100);
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t idx = rng.uniform_index(clip.samples.size());
      AudioClip plus = clip, minus = clip;
      plus.samples[idx] += h;
      minus.samples[idx] -= h;
      const double fd = (model.loss(plus, target) - model.loss(minus, target)) / (2.0 * h);
      const double a = analytic[static_cast<Eigen::Index>(idx)];
      const double denom = std::max({std::abs(a), std::abs(fd), 1e-6});
      INFO(arch_name(model.arch()) << " coord " << idx);
      REQUIRE(std::abs(a - fd) / denom < 1e-4);
    }
  }
}

TEST_CASE("zero head weights give a zero input gradient") {
  for (Arch arch : {Arch::MeanpoolLinear, Arch::Mlp, Arch::Conv1d}) {
    const SurrogateModel model(arch, 4);  // all parameters zero
    const Eigen::VectorXd g = model.input_gradient(random_clip(4800, 3), 1);
    REQUIRE(g.norm() == 0.0);
  }
}

TEST_CASE("samples outside every frame window have exactly zero gradient") {
  const auto& fix = testfix::fixture();
  const SurrogateModel& model = fix.surrogates[0];  // meanpool_linear
  const FeatureConfig& fc = model.feature_config();
  // One full frame plus a tail shorter than a hop: one frame total.
  AudioClip clip = random_clip(static_cast<std::size_t>(fc.frame_length + fc.hop - 1), 7);
  const Eigen::VectorXd g = model.input_gradient(clip, 0);
  for (Eigen::Index i = fc.frame_length; i < g.size(); ++i) REQUIRE(g[i] == 0.0);
  REQUIRE(g.head(fc.frame_length).norm() > 0.0);
}

TEST_CASE("training is deterministic per seed and architectures disagree off-manifold") {
  const CommandDataset ds = generate_dataset(64, 4, 4, 0.5);
  const SurrogateModel a = train_model(Arch::Mlp, ds, 1000);
  const SurrogateModel b = train_model(Arch::Mlp, ds, 1000);
  REQUIRE(a.params() == b.params());

  // Probe along interpolation paths between classes: two models trained from
  // different seeds place their boundary crossings at different mixes.
  const SurrogateModel c = train_model(Arch::Mlp, ds, 2000);
  bool disagree = false;
  for (std::size_t pair = 1; pair < 4 && !disagree; ++pair) {
    const AudioClip& from = ds.clips[0];
    const AudioClip& to = ds.clips[pair * ds.per_class];
    for (double lambda = 0.02; lambda < 1.0 && !disagree; lambda += 0.02) {
      AudioClip probe = from;
      for (std::size_t i = 0; i < probe.samples.size(); ++i)
        probe.samples[i] = (1.0 - lambda) * from.samples[i] + lambda * to.samples[i];
      disagree = a.predict(probe) != c.predict(probe);
    }
  }
  REQUIRE(disagree);
}

TEST_CASE("checkpoints round trip bit-exactly and validate their header") {
  const auto& fix = testfix::fixture();
  const fs::path dir = fs::temp_directory_path() / "eadv_test_models";
  fs::create_directories(dir);
  for (const SurrogateModel& model : fix.surrogates) {
    const auto path = (dir / (std::string("ckpt_") + arch_name(model.arch()) + ".eadv")).string();
    save_checkpoint(model, path);
    const SurrogateModel back = load_checkpoint(path);
    REQUIRE(back.arch() == model.arch());
    REQUIRE(back.num_classes() == model.num_classes());
    REQUIRE(back.trained());
    REQUIRE(back.params() == model.params());
  }

  const auto bad = (dir / "bad.eadv").string();
  std::ofstream(bad, std::ios::binary) << "NOPE data";
  REQUIRE_THROWS_MATCHES(load_checkpoint(bad), FormatError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("magic")));
}

TEST_CASE("black-box targets expose labels and a query counter only") {
  const auto& fix = testfix::fixture();
  BlackBoxTarget box(fix.surrogates[1], "boxed_mlp");
  REQUIRE(box.queries() == 0);

  const AudioClip& training_clip = fix.dataset.clips[0];
  const int l1 = box.query(training_clip);
  const int l2 = box.query(training_clip);
  REQUIRE(l1 == l2);
  REQUIRE(l1 == fix.dataset.labels[0]);  // converged model on its own data
  REQUIRE(box.queries() == 2);
}

TEST_CASE("training diverges loudly when the task is unlearnable") {
  // Scrambled labels on a two-clip-per-class set cannot be fit.
  CommandDataset ds = generate_dataset(5, 4, 2, 0.5);
  Rng rng(6);
  for (auto& label : ds.labels) label = static_cast<int>(rng.uniform_index(4));
  for (std::size_t i = 0; i < ds.clips.size(); ++i) ds.clips[i].label = ds.labels[i];
  TrainOptions opts;
  opts.max_epochs = 3;  // not enough to fit even if it were learnable
  REQUIRE_THROWS_AS(train_model(Arch::MeanpoolLinear, ds, 1, {}, opts), TrainingDivergedError);
}
