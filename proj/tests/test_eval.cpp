#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "eadv/eval.hpp"
#include "fixture.hpp"

using namespace eadv;
namespace fs = std::filesystem;

namespace {

// Small attack batch reused across the evaluation tests.
const std::vector<AttackResult>& batch_results() {
  static const std::vector<AttackResult> results = [] {
    const auto& fix = testfix::fixture();
    AttackConfig cfg;
    cfg.iterations = 60;
    cfg.smoothing_rounds = 2;
    cfg.strategy = Strategy::Rge;
    cfg.seed = 2024;
    cfg.query_every = 10;
    return run_attack_batch(fix.surrogate_ptrs(), fix.carriers, {0, 1, 2, 3}, cfg,
                            fix.target_ptrs());
  }();
  return results;
}

// Brute-force band energy above a frequency; the analysis frame is Hann
// windowed so the strong low-frequency content cannot leak into the band
// being measured.
double band_energy_above(const AudioClip& clip, double hz) {
  const std::size_t n = std::min<std::size_t>(clip.samples.size(), 4096);
  std::vector<double> windowed(n);
  for (std::size_t t = 0; t < n; ++t)
    windowed[t] = (0.5 - 0.5 * std::cos(2.0 * M_PI * t / (n - 1))) * clip.samples[t];
  double energy = 0;
  for (std::size_t b = 1; b < n / 2; ++b) {
    const double freq = static_cast<double>(b) * clip.sample_rate / n;
    if (freq <= hz) continue;
    double re = 0, im = 0;
    for (std::size_t t = 0; t < n; ++t) {
      const double ang = 2.0 * M_PI * static_cast<double>(b * t) / n;
      re += windowed[t] * std::cos(ang);
      im -= windowed[t] * std::sin(ang);
    }
    energy += re * re + im * im;
  }
  return energy;
}

}  // namespace

TEST_CASE("transfer rate arithmetic") {
  SuccessMatrix m(4, 5);
  int set = 0;
  for (std::size_t i = 0; i < 4 && set < 14; ++i)
    for (std::size_t j = 0; j < 5 && set < 14; ++j) {
      m.set(i, j, true);
      ++set;
    }
  REQUIRE(transfer_rate(m) == 0.7);

  SuccessMatrix none(2, 3);
  REQUIRE(transfer_rate(none) == 0.0);
  SuccessMatrix all(2, 3);
  for (auto& c : all.cells) c = 1;
  REQUIRE(transfer_rate(all) == 1.0);
  REQUIRE_THROWS_AS(transfer_rate(SuccessMatrix()), ArgumentError);
}

TEST_CASE("transfer rate equals the brute-force counting oracle") {
  Rng rng(31415);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t rows = 1 + rng.uniform_index(6);
    const std::size_t cols = 1 + rng.uniform_index(8);
    SuccessMatrix m(rows, cols);
    std::size_t count = 0;
    for (auto& c : m.cells) {
      c = rng.bernoulli(0.4) ? 1 : 0;
      count += c;
    }
    REQUIRE(transfer_rate(m) == static_cast<double>(count) / static_cast<double>(rows * cols));
  }
}

TEST_CASE("evaluating against the surrogates reproduces the white-box flags") {
  const auto& fix = testfix::fixture();
  const auto& results = batch_results();
  std::vector<BlackBoxTarget> boxed;
  boxed.reserve(fix.surrogates.size());
  for (const SurrogateModel& m : fix.surrogates)
    boxed.emplace_back(m, std::string("boxed_") + arch_name(m.arch()));
  std::vector<const BlackBoxTarget*> ptrs;
  for (const auto& b : boxed) ptrs.push_back(&b);

  const TransferReport report = evaluate_transfer(results, ptrs);
  std::size_t flag_hits = 0;
  for (const AttackResult& r : results)
    for (std::size_t k = 0; k < fix.surrogates.size(); ++k) flag_hits += r.whitebox_success[k];
  std::size_t report_hits = 0;
  for (const TargetScore& t : report.targets) report_hits += t.final_success.successes();
  REQUIRE(report_hits == flag_hits);
}

TEST_CASE("clean carriers transfer at no more than the class prior") {
  const auto& fix = testfix::fixture();
  // Clean carriers in place of AEs: per (carrier, command) cell the success
  // indicator is hit only when the target already answers the command.
  std::vector<AttackResult> clean;
  for (std::size_t c = 0; c < fix.carriers.size(); ++c)
    for (int cmd = 0; cmd < 4; ++cmd) {
      AttackResult r;
      r.adversarial = fix.carriers[c];
      r.command = cmd;
      r.carrier_index = static_cast<int>(c);
      r.strategy = "clean";
      clean.push_back(std::move(r));
    }
  const TransferReport report = evaluate_transfer(clean, fix.target_ptrs());
  // Each target answers one label per carrier, so exactly one command cell
  // per carrier can hit: TR is bounded by 1/K by construction.
  for (const TargetScore& t : report.targets) REQUIRE(t.tr_final <= 1.0 / 4.0 + 1e-12);

  // Under attack-caused scoring the clean fixture scores nothing at all.
  for (const SweepRow& row : attack_caused_rows(clean, fix.target_ptrs(), fix.carriers, "clean"))
    REQUIRE(row.successes == 0);
}

TEST_CASE("duplicate targets score identically and evaluation is repeatable") {
  const auto& fix = testfix::fixture();
  const auto& results = batch_results();
  const BlackBoxTarget& target = fix.targets[0];
  const TransferReport report = evaluate_transfer(results, {&target, &target});
  REQUIRE(report.targets[0].tr_final == report.targets[1].tr_final);
  REQUIRE(report.targets[0].tr_any == report.targets[1].tr_any);

  const TransferReport again = evaluate_transfer(results, {&target, &target});
  REQUIRE(to_json(report).dump() == to_json(again).dump());
}

TEST_CASE("any-probe scoring never undercounts final scoring") {
  const auto& fix = testfix::fixture();
  const TransferReport report = evaluate_transfer(batch_results(), fix.target_ptrs());
  for (const TargetScore& t : report.targets) {
    REQUIRE(t.tr_any >= t.tr_final);
    REQUIRE(t.final_success.commands == 4);
    REQUIRE(t.final_success.samples == fix.carriers.size());
  }
  REQUIRE(report.config_hash == batch_results().front().config_hash);
}

TEST_CASE("defense: downsampling at the original rate is a near-identity") {
  const auto& fix = testfix::fixture();
  const AudioClip& clip = fix.carriers[0];
  Rng rng(1);
  const DefenseSpec spec{DefenseSpec::Kind::Downsample, 16000};
  const AudioClip defended = apply_defense(clip, spec, rng);
  REQUIRE(defended.samples.size() == clip.samples.size());
  double max_err = 0;
  for (std::size_t i = 0; i < clip.samples.size(); ++i)
    max_err = std::max(max_err, std::abs(defended.samples[i] - clip.samples[i]));
  REQUIRE(max_err < 1e-6);
}

TEST_CASE("defense: zero-amplitude noise is the identity") {
  const auto& fix = testfix::fixture();
  Rng rng(2);
  const AudioClip defended =
      apply_defense(fix.carriers[1], {DefenseSpec::Kind::AddNoise, 0.0}, rng);
  REQUIRE(defended.samples == fix.carriers[1].samples);
}

TEST_CASE("defense: downsampling keeps the sample grid and kills the high band") {
  // Measured on every adversarial example of the batch: everything above the
  // downsampled Nyquist must be resampler residue.
  for (const AttackResult& r : batch_results()) {
    Rng rng(4);
    const AudioClip defended =
        apply_defense(r.adversarial, {DefenseSpec::Kind::Downsample, 5200}, rng);
    REQUIRE(defended.samples.size() == r.adversarial.samples.size());
    const double before = band_energy_above(r.adversarial, 2600.0);
    const double after = band_energy_above(defended, 2600.0);
    REQUIRE(after < before);
    REQUIRE(10.0 * std::log10(before / after) > 20.0);
  }
}

TEST_CASE("defense rejects invalid parameters") {
  const auto& fix = testfix::fixture();
  Rng rng(5);
  REQUIRE_THROWS_AS(apply_defense(fix.carriers[0], {DefenseSpec::Kind::Downsample, 16001}, rng),
                    ArgumentError);
  REQUIRE_THROWS_AS(apply_defense(fix.carriers[0], {DefenseSpec::Kind::AddNoise, -1.0}, rng),
                    ArgumentError);
}

TEST_CASE("defense evaluation emits the table grid and a no-op row matches transfer") {
  const auto& fix = testfix::fixture();
  const auto& results = batch_results();
  const std::vector<DefenseSpec> specs = {
      {DefenseSpec::Kind::Downsample, 5200}, {DefenseSpec::Kind::Downsample, 5600},
      {DefenseSpec::Kind::Downsample, 6000}, {DefenseSpec::Kind::AddNoise, 500},
      {DefenseSpec::Kind::AddNoise, 1000},   {DefenseSpec::Kind::AddNoise, 2000},
  };
  const auto rows = evaluate_defense(results, specs, fix.target_ptrs(), 99);
  REQUIRE(rows.size() == specs.size() * fix.targets.size());

  const auto noop = evaluate_defense(results, {{DefenseSpec::Kind::AddNoise, 0.0}},
                                     fix.target_ptrs(), 99);
  const TransferReport undefended = evaluate_transfer(results, fix.target_ptrs());
  for (std::size_t t = 0; t < fix.targets.size(); ++t)
    REQUIRE(noop[t].tr == undefended.targets[t].tr_final);
}

TEST_CASE("csv rows carry the config hash and ratio strings") {
  const fs::path path = fs::temp_directory_path() / "eadv_test_rows.csv";
  std::vector<SweepRow> rows = {{"rge", "0.5", "target_mlp", 14, 20, 0.7}};
  write_rows_csv(path.string(), rows, "cafe0123");
  std::ifstream in(path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  REQUIRE(text.find("# config_hash=cafe0123") != std::string::npos);
  REQUIRE(text.find("14/20") != std::string::npos);
  REQUIRE(text.find("0.700000") != std::string::npos);
  REQUIRE(text.find("strategy,parameter,target,successes,total,success_ratio,transfer_rate") !=
          std::string::npos);
}

TEST_CASE("sweep grids have one row per cell") {
  const auto& fix = testfix::fixture();
  AttackConfig cfg;
  cfg.iterations = 8;
  cfg.smoothing_rounds = 1;
  cfg.seed = 5;
  cfg.strategy = Strategy::Single;

  // Shrink to one carrier so the grids stay cheap.
  const std::vector<AudioClip> one_carrier = {fix.carriers[0]};
  const std::vector<const SurrogateModel*> one_model = {&fix.surrogates[0]};

  const auto noise_rows =
      noise_level_sweep(one_model, one_carrier, {0.0, 4000.0, 20000.0}, cfg, fix.target_ptrs());
  REQUIRE(noise_rows.size() == 3 * fix.targets.size());
  REQUIRE(noise_rows[0].parameter == "0");

  cfg.smoothing_rounds = 1;
  const auto p_rows =
      p_sweep(fix.surrogate_ptrs(), one_carrier, {0.0, 1.0}, cfg, fix.target_ptrs());
  REQUIRE(p_rows.size() == 2 * 2 * fix.targets.size());  // p x strategy x target
  // p=1 rows: fully masked input freezes the attack; carriers are class-free
  // so nothing transfers.
  for (const SweepRow& row : p_rows)
    if (row.parameter == "1") REQUIRE(row.tr == 0.0);
}

TEST_CASE("batch results do not depend on the worker count") {
  const auto& fix = testfix::fixture();
  AttackConfig cfg;
  cfg.iterations = 6;
  cfg.smoothing_rounds = 1;
  cfg.seed = 77;
  const std::vector<AudioClip> carriers = {fix.carriers[0], fix.carriers[1]};
  const auto serial = run_attack_batch(fix.surrogate_ptrs(), carriers, {0, 1}, cfg, {}, 1);
  const auto threaded = run_attack_batch(fix.surrogate_ptrs(), carriers, {0, 1}, cfg, {}, 3);
  REQUIRE(serial.size() == threaded.size());
  for (std::size_t i = 0; i < serial.size(); ++i) {
    REQUIRE(serial[i].adversarial.samples == threaded[i].adversarial.samples);
    REQUIRE(serial[i].command == threaded[i].command);
    REQUIRE(serial[i].carrier_index == threaded[i].carrier_index);
  }
}

TEST_CASE("unbalanced fixtures are rejected") {
  const auto& fix = testfix::fixture();
  std::vector<AttackResult> lopsided;
  AttackResult a;
  a.adversarial = fix.carriers[0];
  a.command = 0;
  lopsided.push_back(a);
  a.command = 1;
  lopsided.push_back(a);
  a.command = 1;
  lopsided.push_back(a);
  REQUIRE_THROWS_AS(evaluate_transfer(lopsided, fix.target_ptrs()), ArgumentError);
}
