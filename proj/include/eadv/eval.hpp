#pragma once

// Transfer-rate measurement, attack batches over the carrier/command
// fixture, noise-level and dropout-p sweeps, input-transform defenses, and
// report emission (JSON for full reports, CSV grids for plotting).

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "eadv/attack.hpp"
#include "eadv/model.hpp"

namespace eadv {

// Boolean success matrix indexed (command, sample-within-command).
struct SuccessMatrix {
  std::size_t commands = 0;
  std::size_t samples = 0;
  std::vector<std::uint8_t> cells;

  SuccessMatrix() = default;
  SuccessMatrix(std::size_t c, std::size_t s) : commands(c), samples(s), cells(c * s, 0) {}

  bool at(std::size_t i, std::size_t j) const { return cells[i * samples + j] != 0; }
  void set(std::size_t i, std::size_t j, bool v) { cells[i * samples + j] = v ? 1 : 0; }
  std::size_t total() const { return commands * samples; }
  std::size_t successes() const {
    std::size_t n = 0;
    for (std::uint8_t c : cells) n += c;
    return n;
  }
};

// TR = successes / X.
inline double transfer_rate(const SuccessMatrix& m) {
  if (m.total() == 0) throw ArgumentError("transfer_rate: empty success matrix");
  return static_cast<double>(m.successes()) / static_cast<double>(m.total());
}

struct TargetScore {
  std::string name;
  SuccessMatrix final_success;  // final-iterate top-1 == command
  SuccessMatrix probe_success;  // final success or any matching probe label
  double tr_final = 0.0;
  double tr_any = 0.0;
};

struct TransferReport {
  std::vector<TargetScore> targets;
  double aggregate_final = 0.0;
  double aggregate_any = 0.0;
  std::string strategy;
  std::string config_hash;
  std::vector<int> commands;  // matrix row labels
  std::vector<std::uint64_t> ae_queries;
};

// Scores each AE against each target. An AE counts for command i if the
// target's top-1 label equals i; any-probe scoring additionally accepts a
// matching label in the AE's probe transcript for the same target name.
inline TransferReport evaluate_transfer(const std::vector<AttackResult>& results,
                                        const std::vector<const BlackBoxTarget*>& targets) {
  if (results.empty()) throw ArgumentError("evaluate_transfer: no attack results");
  if (targets.empty()) throw ArgumentError("evaluate_transfer: no target models");
  for (const auto* t : targets) {
    if (t == nullptr) throw ArgumentError("evaluate_transfer: null target");
    if (!t->trained()) throw ArgumentError("evaluate_transfer: target model is untrained");
  }

  std::map<int, std::vector<const AttackResult*>> by_command;
  for (const AttackResult& r : results) by_command[r.command].push_back(&r);
  const std::size_t n_commands = by_command.size();
  const std::size_t per_command = by_command.begin()->second.size();
  for (const auto& [cmd, group] : by_command)
    if (group.size() != per_command)
      throw ArgumentError("evaluate_transfer: unbalanced fixture (command " + std::to_string(cmd) +
                          " has " + std::to_string(group.size()) + " samples, expected " +
                          std::to_string(per_command) + ")");

  TransferReport report;
  report.strategy = results.front().strategy;
  report.config_hash = results.front().config_hash;
  for (const auto& [cmd, group] : by_command) report.commands.push_back(cmd);
  for (const AttackResult& r : results) report.ae_queries.push_back(r.queries_used);

  std::size_t agg_final = 0, agg_any = 0;
  for (const auto* target : targets) {
    TargetScore score;
    score.name = target->name();
    score.final_success = SuccessMatrix(n_commands, per_command);
    score.probe_success = SuccessMatrix(n_commands, per_command);
    std::size_t i = 0;
    for (const auto& [cmd, group] : by_command) {
      for (std::size_t j = 0; j < group.size(); ++j) {
        const AttackResult& r = *group[j];
        const bool final_hit = target->query(r.adversarial) == cmd;
        bool any_hit = final_hit;
        if (!any_hit) {
          for (const ProbeRecord& p : r.probes)
            if (p.target_name == target->name() && p.label == cmd) {
              any_hit = true;
              break;
            }
        }
        score.final_success.set(i, j, final_hit);
        score.probe_success.set(i, j, any_hit);
      }
      ++i;
    }
    score.tr_final = transfer_rate(score.final_success);
    score.tr_any = transfer_rate(score.probe_success);
    agg_final += score.final_success.successes();
    agg_any += score.probe_success.successes();
    report.targets.push_back(std::move(score));
  }
  const double cells = static_cast<double>(n_commands * per_command * targets.size());
  report.aggregate_final = static_cast<double>(agg_final) / cells;
  report.aggregate_any = static_cast<double>(agg_any) / cells;
  return report;
}

// Runs the carrier x command grid. Per-attack seeds derive from the base
// seed and the grid position, so results are independent of `jobs` and of
// scheduling; results come back carrier-major, command-minor.
inline std::vector<AttackResult> run_attack_batch(
    const std::vector<const SurrogateModel*>& models, const std::vector<AudioClip>& carriers,
    const std::vector<int>& commands, const AttackConfig& base_cfg,
    const std::vector<const BlackBoxTarget*>& probe_targets = {}, int jobs = 1) {
  if (carriers.empty()) throw ArgumentError("run_attack_batch: no carriers");
  if (commands.empty()) throw ArgumentError("run_attack_batch: no commands");
  struct Job {
    int carrier_index;
    int command;
  };
  std::vector<Job> grid;
  for (std::size_t c = 0; c < carriers.size(); ++c)
    for (int cmd : commands) grid.push_back({static_cast<int>(c), cmd});

  std::vector<AttackResult> results(grid.size());
  auto worker = [&](std::size_t idx) {
    AttackConfig cfg = base_cfg;
    cfg.seed = derive_seed(derive_seed(base_cfg.seed, grid[idx].carrier_index),
                           static_cast<std::uint64_t>(grid[idx].command));
    AttackResult r = run_attack(models, carriers[grid[idx].carrier_index], grid[idx].command, cfg,
                                probe_targets);
    r.carrier_index = grid[idx].carrier_index;
    results[idx] = std::move(r);
  };

  if (jobs <= 1) {
    for (std::size_t i = 0; i < grid.size(); ++i) {
      EADV_LOG_DEBUG("attack %zu/%zu: carrier %d -> command %d", i + 1, grid.size(),
                     grid[i].carrier_index, grid[i].command);
      worker(i);
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < jobs; ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next.fetch_add(1); i < grid.size(); i = next.fetch_add(1)) worker(i);
      });
    for (auto& th : pool) th.join();
  }
  return results;
}

struct DefenseSpec {
  enum class Kind { Downsample, AddNoise };
  Kind kind = Kind::Downsample;
  double value = 0.0;  // Hz for Downsample, 16-bit amplitude for AddNoise

  std::string label() const {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%s:%g",
                  kind == Kind::Downsample ? "downsample" : "add_noise", value);
    return buf;
  }
};

// Downsample: down-then-up through the linear resampler, restoring the
// original grid. AddNoise: uniform noise at value/32768, clamped to [-1, 1].
inline AudioClip apply_defense(const AudioClip& clip, const DefenseSpec& spec, Rng& rng) {
  switch (spec.kind) {
    case DefenseSpec::Kind::Downsample: {
      if (spec.value <= 0 || spec.value > clip.sample_rate)
        throw ArgumentError("apply_defense: downsample rate must be in (0, original rate]");
      const AudioClip down = resample(clip, static_cast<int>(spec.value));
      return resample_to_length(down, clip.sample_rate, clip.samples.size());
    }
    case DefenseSpec::Kind::AddNoise: {
      if (spec.value < 0) throw ArgumentError("apply_defense: noise amplitude must be >= 0");
      AudioClip out = add_uniform_noise(clip, spec.value / 32768.0, rng);
      for (double& s : out.samples) s = std::clamp(s, -1.0, 1.0);
      return out;
    }
  }
  throw ArgumentError("apply_defense: unknown defense kind");
}

// One grid cell of a sweep/defense table.
struct SweepRow {
  std::string strategy;
  std::string parameter;  // swept value, defense label, or scoring mode
  std::string target;
  std::size_t successes = 0;
  std::size_t total = 0;
  double tr = 0.0;
};

inline std::vector<SweepRow> rows_from_report(const TransferReport& report,
                                              const std::string& parameter) {
  std::vector<SweepRow> rows;
  for (const TargetScore& t : report.targets)
    rows.push_back({report.strategy, parameter, t.name, t.final_success.successes(),
                    t.final_success.total(), t.tr_final});
  return rows;
}

// Sweep scoring counts only attack-caused hits: a cell whose clean carrier
// already answers the command (a closed-world classifier always answers
// something) is excluded from both counts. This is what makes the p=1
// endpoint land at TR = 0 rather than at the class prior.
inline std::vector<SweepRow> attack_caused_rows(const std::vector<AttackResult>& results,
                                                const std::vector<const BlackBoxTarget*>& targets,
                                                const std::vector<AudioClip>& carriers,
                                                const std::string& parameter) {
  std::vector<SweepRow> rows;
  for (const auto* target : targets) {
    std::vector<int> clean_label(carriers.size());
    for (std::size_t c = 0; c < carriers.size(); ++c) clean_label[c] = target->query(carriers[c]);
    std::size_t successes = 0, total = 0;
    for (const AttackResult& r : results) {
      if (r.carrier_index < 0) throw ArgumentError("attack_caused_rows: missing carrier index");
      if (clean_label[static_cast<std::size_t>(r.carrier_index)] == r.command) continue;
      ++total;
      if (target->query(r.adversarial) == r.command) ++successes;
    }
    rows.push_back({results.front().strategy, parameter, target->name(), successes, total,
                    total == 0 ? 0.0 : static_cast<double>(successes) / total});
  }
  return rows;
}

// TR after each defense transform, per target (final-iterate scoring; the
// probe transcript predates the defense). Noise draws derive from eval_seed,
// the defense index, and the AE index.
inline std::vector<SweepRow> evaluate_defense(const std::vector<AttackResult>& results,
                                              const std::vector<DefenseSpec>& specs,
                                              const std::vector<const BlackBoxTarget*>& targets,
                                              std::uint64_t eval_seed) {
  std::vector<SweepRow> rows;
  for (std::size_t s = 0; s < specs.size(); ++s) {
    std::vector<AttackResult> defended = results;
    for (std::size_t i = 0; i < defended.size(); ++i) {
      Rng rng(derive_seed(derive_seed(eval_seed, s), i));
      defended[i].adversarial = apply_defense(defended[i].adversarial, specs[s], rng);
      defended[i].probes.clear();
    }
    TransferReport report = evaluate_transfer(defended, targets);
    for (SweepRow row : rows_from_report(report, specs[s].label())) rows.push_back(row);
  }
  return rows;
}

// Table-1-style protocol: one attack batch per noise level (16-bit units),
// same base seed for every level so the level is the only varying factor.
inline std::vector<SweepRow> noise_level_sweep(const std::vector<const SurrogateModel*>& models,
                                               const std::vector<AudioClip>& carriers,
                                               const std::vector<double>& levels_16bit,
                                               const AttackConfig& base_cfg,
                                               const std::vector<const BlackBoxTarget*>& targets,
                                               int jobs = 1) {
  std::vector<int> commands(models.front()->num_classes());
  std::iota(commands.begin(), commands.end(), 0);
  std::vector<SweepRow> rows;
  for (double level : levels_16bit) {
    if (level < 0) throw ArgumentError("noise_level_sweep: levels must be >= 0");
    AttackConfig cfg = base_cfg;
    cfg.noise_amplitude = level / 32768.0;
    EADV_LOG_INFO("noise sweep: level %g", level);
    const auto results = run_attack_batch(models, carriers, commands, cfg, targets, jobs);
    char param[32];
    std::snprintf(param, sizeof(param), "%g", level);
    for (SweepRow row : attack_caused_rows(results, targets, carriers, param)) rows.push_back(row);
  }
  return rows;
}

// Fig-4-style protocol: RGE and DGWE TR as a function of the dropout rate.
inline std::vector<SweepRow> p_sweep(const std::vector<const SurrogateModel*>& models,
                                     const std::vector<AudioClip>& carriers,
                                     const std::vector<double>& p_values,
                                     const AttackConfig& base_cfg,
                                     const std::vector<const BlackBoxTarget*>& targets,
                                     int jobs = 1) {
  std::vector<int> commands(models.front()->num_classes());
  std::iota(commands.begin(), commands.end(), 0);
  std::vector<SweepRow> rows;
  for (double p : p_values) {
    for (Strategy strategy : {Strategy::Rge, Strategy::Dgwe}) {
      AttackConfig cfg = base_cfg;
      cfg.dropout_p = p;
      cfg.strategy = strategy;
      EADV_LOG_INFO("p sweep: p=%g strategy=%s", p, strategy_name(strategy));
      const auto results = run_attack_batch(models, carriers, commands, cfg, targets, jobs);
      char param[32];
      std::snprintf(param, sizeof(param), "%g", p);
      for (SweepRow row : attack_caused_rows(results, targets, carriers, param)) rows.push_back(row);
    }
  }
  return rows;
}

// ---- report emission -------------------------------------------------------

inline nlohmann::json feature_config_json(const FeatureConfig& fc = {}) {
  return nlohmann::json{{"frame_length", fc.frame_length}, {"hop", fc.hop},
                        {"mel_bins", fc.mel_bins},         {"sample_rate", fc.sample_rate},
                        {"mel_fmin", fc.mel_fmin},         {"mel_fmax", fc.mel_fmax},
                        {"energy_floor", fc.energy_floor}};
}

inline std::string ratio_string(std::size_t successes, std::size_t total) {
  return std::to_string(successes) + "/" + std::to_string(total);
}

inline nlohmann::json to_json(const TransferReport& report) {
  nlohmann::json j;
  j["version"] = kToolVersion;
  j["strategy"] = report.strategy;
  j["config_hash"] = report.config_hash;
  j["feature_config"] = feature_config_json();
  j["commands"] = report.commands;
  j["ae_queries"] = report.ae_queries;
  nlohmann::json targets = nlohmann::json::array();
  for (const TargetScore& t : report.targets) {
    nlohmann::json matrix_final = nlohmann::json::array();
    nlohmann::json matrix_any = nlohmann::json::array();
    for (std::size_t i = 0; i < t.final_success.commands; ++i) {
      nlohmann::json rf = nlohmann::json::array(), ra = nlohmann::json::array();
      for (std::size_t jdx = 0; jdx < t.final_success.samples; ++jdx) {
        rf.push_back(t.final_success.at(i, jdx));
        ra.push_back(t.probe_success.at(i, jdx));
      }
      matrix_final.push_back(rf);
      matrix_any.push_back(ra);
    }
    targets.push_back({{"name", t.name},
                       {"matrix_final", matrix_final},
                       {"matrix_any_probe", matrix_any},
                       {"successes_final", t.final_success.successes()},
                       {"ratio_final", ratio_string(t.final_success.successes(),
                                                    t.final_success.total())},
                       {"tr_final", t.tr_final},
                       {"successes_any_probe", t.probe_success.successes()},
                       {"ratio_any_probe", ratio_string(t.probe_success.successes(),
                                                        t.probe_success.total())},
                       {"tr_any_probe", t.tr_any}});
  }
  j["targets"] = targets;
  j["aggregate_tr_final"] = report.aggregate_final;
  j["aggregate_tr_any_probe"] = report.aggregate_any;
  return j;
}

// One row per cell; "A/B" ratios rendered alongside the decimal TR.
inline void write_rows_csv(const std::string& path, const std::vector<SweepRow>& rows,
                           const std::string& cfg_hash) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("write_rows_csv: cannot open '" + path + "'");
  const FeatureConfig fc;
  out << "# config_hash=" << cfg_hash << "\n";
  out << "# features=frame_length:" << fc.frame_length << ",hop:" << fc.hop
      << ",mel_bins:" << fc.mel_bins << ",sample_rate:" << fc.sample_rate << "\n";
  out << "strategy,parameter,target,successes,total,success_ratio,transfer_rate\n";
  char tr[32];
  for (const SweepRow& r : rows) {
    std::snprintf(tr, sizeof(tr), "%.6f", r.tr);
    out << r.strategy << "," << r.parameter << "," << r.target << "," << r.successes << ","
        << r.total << "," << ratio_string(r.successes, r.total) << "," << tr << "\n";
  }
  if (!out) throw IoError("write_rows_csv: write failure on '" + path + "'");
}

inline void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("write_json_file: cannot open '" + path + "'");
  out << j.dump(2) << "\n";
  if (!out) throw IoError("write_json_file: write failure on '" + path + "'");
}

}  // namespace eadv
