// eadv: dataset generation, surrogate training, ensemble attacks, transfer
// evaluation, sweeps, and defenses from one reproducible command line.
//
// Exit codes: 0 success; 1 run completed but failed its goal (or I/O error);
// 2 usage/config error; 3 training divergence; 4 numeric failure.

#include <CLI11.hpp>
#include <filesystem>
#include <string>
#include <vector>

#include "eadv/eadv.hpp"

namespace fs = std::filesystem;
using namespace eadv;

namespace {

struct GlobalArgs {
  std::uint64_t seed = 0;
  std::string config_path;
  std::string out_dir;
  int jobs = 1;
};

void add_global_flags(CLI::App* cmd, GlobalArgs& g, bool out_required = true) {
  cmd->add_option("--seed", g.seed, "Base seed; all randomness derives from it");
  cmd->add_option("--config", g.config_path, "JSON attack-config file (flags override)");
  auto* out = cmd->add_option("--out", g.out_dir, "Output directory");
  if (out_required) out->required();
  cmd->add_option("--jobs", g.jobs, "Parallel attack workers");
}

struct AttackFlags {
  std::string strategy, level, alpha_csv, model;
  double epsilon = 0, p = 0, noise = 0, momentum = 0, sigma = 0, lr = 0;
  int iters = 0, rounds = 0, query_every = 0, scale_copies = 0;
  bool stop_probe = false, stop_whitebox = false;

  CLI::App* cmd = nullptr;

  void add_to(CLI::App* c) {
    cmd = c;
    c->add_option("--strategy", strategy,
                  "single|self_ensemble|scale_invariant|rge|dgwe|loss_ensemble");
    c->add_option("--epsilon", epsilon, "L-inf budget in normalized units");
    c->add_option("--iters", iters, "Outer iterations T");
    c->add_option("--rounds", rounds, "Smoothing rounds M");
    c->add_option("--p", p, "Dropout probability");
    c->add_option("--noise-amp", noise, "Smoothing noise amplitude A (normalized units)");
    c->add_option("--momentum", momentum, "Momentum factor mu");
    c->add_option("--sigma", sigma, "Weighting smoothness sigma");
    c->add_option("--lr", lr, "Adam learning rate");
    c->add_option("--query-every", query_every, "Iterations between black-box probes");
    c->add_option("--scale-copies", scale_copies, "Scale copies m for scale_invariant");
    c->add_option("--level", level, "Ensemble level: loss|logits|predictions");
    c->add_option("--alpha", alpha_csv, "Comma-separated ensemble weights");
    c->add_flag("--stop-on-probe", stop_probe, "Stop once every probe returns the target");
    c->add_flag("--stop-on-whitebox", stop_whitebox, "Stop once every surrogate is fooled");
    c->add_option("--model", model, "Surrogate for single-model strategies (arch name)");
  }

  AttackConfig resolve(const GlobalArgs& g) const {
    AttackConfig cfg;
    if (!g.config_path.empty()) {
      std::ifstream in(g.config_path);
      if (!in) throw ArgumentError("config file not found: '" + g.config_path + "'");
      nlohmann::json j;
      try {
        in >> j;
      } catch (const nlohmann::json::exception& e) {
        throw FormatError("malformed config '" + g.config_path + "': " + e.what());
      }
      cfg = attack_config_from_json(j);
    }
    auto passed = [&](const char* name) { return cmd != nullptr && cmd->count(name) > 0; };
    if (passed("--strategy")) cfg.strategy = strategy_from_name(strategy);
    if (passed("--epsilon")) cfg.epsilon = epsilon;
    if (passed("--iters")) cfg.iterations = iters;
    if (passed("--rounds")) cfg.smoothing_rounds = rounds;
    if (passed("--p")) cfg.dropout_p = p;
    if (passed("--noise-amp")) cfg.noise_amplitude = noise;
    if (passed("--momentum")) cfg.momentum = momentum;
    if (passed("--sigma")) cfg.sigma = sigma;
    if (passed("--lr")) cfg.lr = lr;
    if (passed("--query-every")) cfg.query_every = query_every;
    if (passed("--scale-copies")) cfg.scale_copies = scale_copies;
    if (passed("--level")) cfg.ensemble_level = ensemble_level_from_name(level);
    if (passed("--alpha")) {
      cfg.alpha.clear();
      std::stringstream ss(alpha_csv);
      std::string tok;
      while (std::getline(ss, tok, ',')) cfg.alpha.push_back(std::stod(tok));
    }
    if (passed("--stop-on-probe")) cfg.stop_on_probe_success = stop_probe;
    if (passed("--stop-on-whitebox")) cfg.stop_on_whitebox_success = stop_whitebox;
    if (cmd != nullptr && cmd->count("--seed") > 0) cfg.seed = g.seed;
    cfg.validate();
    return cfg;
  }
};

std::vector<double> parse_csv_doubles(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(std::stod(tok));
  return out;
}

void ensure_out_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory '" + dir + "': " + ec.message());
}

void write_manifest(const std::string& out_dir, const std::string& command,
                    std::uint64_t seed, const nlohmann::json& config,
                    const nlohmann::json& inputs, const nlohmann::json& outputs) {
  nlohmann::json manifest;
  manifest["command"] = command;
  manifest["version"] = kToolVersion;
  manifest["seed"] = seed;
  manifest["config"] = config;
  manifest["config_hash"] = hex_string(fnv1a64(config.dump()));
  manifest["inputs"] = inputs;
  manifest["outputs"] = outputs;
  manifest["feature_config"] = feature_config_json();
  write_json_file((fs::path(out_dir) / "manifest.json").string(), manifest);
}

struct ModelSet {
  std::vector<SurrogateModel> surrogates;
  std::vector<BlackBoxTarget> targets;

  std::vector<const SurrogateModel*> surrogate_ptrs() const {
    std::vector<const SurrogateModel*> out;
    for (const auto& m : surrogates) out.push_back(&m);
    return out;
  }
  std::vector<const BlackBoxTarget*> target_ptrs() const {
    std::vector<const BlackBoxTarget*> out;
    for (const auto& t : targets) out.push_back(&t);
    return out;
  }
};

const char* kSurrogateFiles[] = {"surrogate_meanpool_linear.eadv", "surrogate_mlp.eadv",
                                 "surrogate_conv1d.eadv"};
const char* kTargetFiles[] = {"target_mlp.eadv", "target_conv1d.eadv"};

ModelSet load_models(const std::string& dir) {
  ModelSet set;
  for (const char* name : kSurrogateFiles) {
    const fs::path path = fs::path(dir) / name;
    if (!fs::exists(path))
      throw ArgumentError("missing checkpoint '" + path.string() + "' (run `eadv train` first)");
    set.surrogates.push_back(load_checkpoint(path.string()));
  }
  for (const char* name : kTargetFiles) {
    const fs::path path = fs::path(dir) / name;
    if (!fs::exists(path))
      throw ArgumentError("missing checkpoint '" + path.string() + "' (run `eadv train` first)");
    set.targets.emplace_back(load_checkpoint(path.string()),
                             fs::path(name).stem().string());
  }
  return set;
}

// Attack outputs are one directory per AE: result.json + adversarial.wav.
std::vector<AttackResult> load_attack_results(const std::string& aes_dir) {
  std::vector<fs::path> result_files;
  if (!fs::exists(aes_dir)) throw ArgumentError("AE directory not found: '" + aes_dir + "'");
  for (const auto& entry : fs::recursive_directory_iterator(aes_dir))
    if (entry.is_regular_file() && entry.path().filename() == "result.json")
      result_files.push_back(entry.path());
  std::sort(result_files.begin(), result_files.end());
  if (result_files.empty())
    throw ArgumentError("no result.json files under '" + aes_dir + "'");

  std::vector<AttackResult> results;
  for (const fs::path& file : result_files) {
    std::ifstream in(file);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("malformed attack result '" + file.string() + "': " + e.what());
    }
    AttackResult r;
    r.command = j.at("command").get<int>();
    r.carrier_index = j.value("carrier_index", -1);
    r.strategy = j.at("strategy").get<std::string>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.queries_used = j.value("queries_used", std::uint64_t{0});
    if (j.contains("whitebox_success"))
      r.whitebox_success = j.at("whitebox_success").get<std::vector<bool>>();
    if (j.contains("probes"))
      for (const auto& p : j.at("probes"))
        r.probes.push_back({p.at("iteration").get<int>(), p.at("target_index").get<int>(),
                            p.at("target").get<std::string>(), p.at("label").get<int>()});
    const std::string wav = j.value("adversarial_wav", std::string("adversarial.wav"));
    r.adversarial = load_wav((file.parent_path() / wav).string());
    results.push_back(std::move(r));
  }
  return results;
}

std::vector<SweepRow> transfer_rows(const TransferReport& report) {
  std::vector<SweepRow> rows;
  for (const TargetScore& t : report.targets) {
    rows.push_back({report.strategy, "final", t.name, t.final_success.successes(),
                    t.final_success.total(), t.tr_final});
    rows.push_back({report.strategy, "any_probe", t.name, t.probe_success.successes(),
                    t.probe_success.total(), t.tr_any});
  }
  return rows;
}

// ---- subcommands -----------------------------------------------------------

int cmd_gen_data(const GlobalArgs& g, int classes, int per_class, double seconds, int carriers,
                 double carrier_seconds) {
  const CommandDataset ds = generate_dataset(g.seed, classes, per_class, seconds);
  const auto carrier_clips = generate_carriers(derive_seed(g.seed, 0xCA), carriers,
                                               carrier_seconds);
  ensure_out_dir(g.out_dir);
  write_dataset(ds, carrier_clips, g.out_dir);
  nlohmann::json config{{"classes", classes},
                        {"per_class", per_class},
                        {"clip_seconds", seconds},
                        {"carriers", carriers},
                        {"carrier_seconds", carrier_seconds}};
  write_manifest(g.out_dir, "gen-data", g.seed, config, nlohmann::json::object(),
                 {"dataset.json"});
  EADV_LOG_INFO("gen-data: %d classes x %d clips + %d carriers -> %s", classes, per_class,
                carriers, g.out_dir.c_str());
  return 0;
}

int cmd_train(const GlobalArgs& g, const std::string& data_dir) {
  const CommandDataset ds = load_dataset(data_dir);
  ensure_out_dir(g.out_dir);

  nlohmann::json models_json = nlohmann::json::array();
  const std::vector<Arch> archs = {Arch::MeanpoolLinear, Arch::Mlp, Arch::Conv1d};
  auto save = [&](const SurrogateModel& model, const std::string& file,
                  const std::string& role) {
    save_checkpoint(model, (fs::path(g.out_dir) / file).string());
    models_json.push_back({{"file", file},
                           {"arch", arch_name(model.arch())},
                           {"role", role},
                           {"train_accuracy", model.train_accuracy()}});
  };
  const auto surrogates = train_surrogates(ds, archs, g.seed);
  for (std::size_t i = 0; i < surrogates.size(); ++i)
    save(surrogates[i], kSurrogateFiles[i], "surrogate");
  save(train_model(Arch::Mlp, ds, derive_seed(g.seed, 0x71)), kTargetFiles[0], "target");
  save(train_model(Arch::Conv1d, ds, derive_seed(g.seed, 0x72)), kTargetFiles[1], "target");

  nlohmann::json config{{"train_seed", g.seed}};
  config["models"] = models_json;
  write_manifest(g.out_dir, "train", g.seed, config, {{"data", data_dir}},
                 {kSurrogateFiles[0], kSurrogateFiles[1], kSurrogateFiles[2], kTargetFiles[0],
                  kTargetFiles[1]});
  return 0;
}

int cmd_attack(const GlobalArgs& g, const AttackFlags& flags, const std::string& models_dir,
               const std::string& carrier_path, int target) {
  const ModelSet set = load_models(models_dir);
  const AttackConfig cfg = flags.resolve(g);
  const AudioClip carrier = load_wav(carrier_path);

  std::vector<const SurrogateModel*> models;
  const bool single = cfg.strategy == Strategy::Single ||
                      cfg.strategy == Strategy::SelfEnsemble ||
                      cfg.strategy == Strategy::ScaleInvariant;
  if (single) {
    const Arch arch = flags.model.empty() ? Arch::MeanpoolLinear : arch_from_name(flags.model);
    for (const SurrogateModel& m : set.surrogates)
      if (m.arch() == arch) models = {&m};
  } else {
    models = set.surrogate_ptrs();
  }

  const AttackResult result = run_attack(models, carrier, target, cfg, set.target_ptrs());
  ensure_out_dir(g.out_dir);
  save_wav(result.adversarial, (fs::path(g.out_dir) / "adversarial.wav").string());
  nlohmann::json rj = to_json(result, cfg);
  rj["adversarial_wav"] = "adversarial.wav";
  rj["carrier"] = carrier_path;
  write_json_file((fs::path(g.out_dir) / "result.json").string(), rj);
  write_manifest(g.out_dir, "attack", cfg.seed, to_json(cfg),
                 {{"models", models_dir}, {"carrier", carrier_path}, {"target", target}},
                 {"adversarial.wav", "result.json"});
  EADV_LOG_INFO("attack: strategy=%s target=%d fooled=%s", strategy_name(cfg.strategy), target,
                result.all_whitebox_fooled() ? "all" : "not all");
  return result.all_whitebox_fooled() ? 0 : 1;
}

int cmd_evaluate(const GlobalArgs& g, const std::string& models_dir, const std::string& aes_dir) {
  const ModelSet set = load_models(models_dir);
  const auto results = load_attack_results(aes_dir);
  const TransferReport report = evaluate_transfer(results, set.target_ptrs());
  ensure_out_dir(g.out_dir);
  write_json_file((fs::path(g.out_dir) / "transfer_report.json").string(), to_json(report));
  write_rows_csv((fs::path(g.out_dir) / "transfer_report.csv").string(), transfer_rows(report),
                 report.config_hash);
  nlohmann::json config{{"aes", aes_dir}};
  write_manifest(g.out_dir, "evaluate", g.seed, config,
                 {{"models", models_dir}, {"aes", aes_dir}},
                 {"transfer_report.json", "transfer_report.csv"});
  return 0;
}

int cmd_defend(const GlobalArgs& g, const std::string& models_dir, const std::string& aes_dir,
               const std::string& rates_csv, const std::string& amps_csv) {
  const ModelSet set = load_models(models_dir);
  const auto results = load_attack_results(aes_dir);
  std::vector<DefenseSpec> specs;
  for (double rate : parse_csv_doubles(rates_csv))
    specs.push_back({DefenseSpec::Kind::Downsample, rate});
  for (double amp : parse_csv_doubles(amps_csv))
    specs.push_back({DefenseSpec::Kind::AddNoise, amp});

  const auto rows = evaluate_defense(results, specs, set.target_ptrs(), g.seed);
  ensure_out_dir(g.out_dir);
  const std::string cfg_hash = results.front().config_hash;
  write_rows_csv((fs::path(g.out_dir) / "defense.csv").string(), rows, cfg_hash);
  nlohmann::json rows_json = nlohmann::json::array();
  for (const SweepRow& r : rows)
    rows_json.push_back({{"strategy", r.strategy},
                         {"parameter", r.parameter},
                         {"target", r.target},
                         {"successes", r.successes},
                         {"total", r.total},
                         {"ratio", ratio_string(r.successes, r.total)},
                         {"transfer_rate", r.tr}});
  nlohmann::json report{{"version", kToolVersion},
                        {"config_hash", cfg_hash},
                        {"feature_config", feature_config_json()},
                        {"rows", rows_json}};
  write_json_file((fs::path(g.out_dir) / "defense.json").string(), report);
  nlohmann::json config{{"rates", rates_csv}, {"amps", amps_csv}, {"eval_seed", g.seed}};
  write_manifest(g.out_dir, "defend", g.seed, config,
                 {{"models", models_dir}, {"aes", aes_dir}}, {"defense.csv", "defense.json"});
  return 0;
}

int run_sweep(const GlobalArgs& g, const AttackFlags& flags, const std::string& models_dir,
              const std::string& data_dir, const std::string& values_csv, int max_carriers,
              bool sweep_noise) {
  const ModelSet set = load_models(models_dir);
  AttackConfig cfg = flags.resolve(g);
  std::vector<AudioClip> carriers = load_carriers(data_dir);
  if (max_carriers > 0 && carriers.size() > static_cast<std::size_t>(max_carriers))
    carriers.resize(static_cast<std::size_t>(max_carriers));
  const auto values = parse_csv_doubles(values_csv);

  const auto rows = sweep_noise
                        ? noise_level_sweep(set.surrogate_ptrs(), carriers, values, cfg,
                                            set.target_ptrs(), g.jobs)
                        : p_sweep(set.surrogate_ptrs(), carriers, values, cfg,
                                  set.target_ptrs(), g.jobs);

  ensure_out_dir(g.out_dir);
  const char* base = sweep_noise ? "noise_sweep" : "p_sweep";
  write_rows_csv((fs::path(g.out_dir) / (std::string(base) + ".csv")).string(), rows,
                 config_hash(cfg));
  nlohmann::json rows_json = nlohmann::json::array();
  for (const SweepRow& r : rows)
    rows_json.push_back({{"strategy", r.strategy},
                         {"parameter", r.parameter},
                         {"target", r.target},
                         {"successes", r.successes},
                         {"total", r.total},
                         {"ratio", ratio_string(r.successes, r.total)},
                         {"transfer_rate", r.tr}});
  nlohmann::json report{{"version", kToolVersion},
                        {"config_hash", config_hash(cfg)},
                        {"feature_config", feature_config_json()},
                        {"attack_config", to_json(cfg)},
                        {"values", values},
                        {"rows", rows_json}};
  write_json_file((fs::path(g.out_dir) / (std::string(base) + ".json")).string(), report);
  write_manifest(g.out_dir, sweep_noise ? "sweep-noise" : "sweep-p", cfg.seed, to_json(cfg),
                 {{"models", models_dir}, {"data", data_dir}, {"values", values_csv}},
                 {std::string(base) + ".csv", std::string(base) + ".json"});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Ensemble-based transferable audio adversarial attack toolkit"};
  app.require_subcommand(1);

  // gen-data
  GlobalArgs gen_g;
  int gen_classes = 4, gen_per_class = 25, gen_carriers = 5;
  double gen_seconds = 4.0, gen_carrier_seconds = 4.0;
  auto* gen = app.add_subcommand("gen-data", "Generate the command dataset and carriers");
  add_global_flags(gen, gen_g);
  gen->add_option("--classes", gen_classes, "Number of command classes");
  gen->add_option("--per-class", gen_per_class, "Clips per class");
  gen->add_option("--seconds", gen_seconds, "Clip length in seconds");
  gen->add_option("--carriers", gen_carriers, "Carrier clip count");
  gen->add_option("--carrier-seconds", gen_carrier_seconds, "Carrier length in seconds");

  // train
  GlobalArgs train_g;
  std::string train_data;
  auto* train = app.add_subcommand("train", "Train surrogates and held-out targets");
  add_global_flags(train, train_g);
  train->add_option("--data", train_data, "Dataset directory (from gen-data)")->required();

  // attack
  GlobalArgs attack_g;
  AttackFlags attack_flags;
  std::string attack_models, attack_carrier;
  int attack_target = 0;
  auto* attack = app.add_subcommand("attack", "Run one ensemble attack on a carrier");
  add_global_flags(attack, attack_g);
  attack_flags.add_to(attack);
  attack->add_option("--models", attack_models, "Checkpoint directory")->required();
  attack->add_option("--carrier", attack_carrier, "Carrier WAV path")->required();
  attack->add_option("--target", attack_target, "Target command class id")->required();

  // evaluate
  GlobalArgs eval_g;
  std::string eval_models, eval_aes;
  auto* evaluate = app.add_subcommand("evaluate", "Score AEs against the held-out targets");
  add_global_flags(evaluate, eval_g);
  evaluate->add_option("--models", eval_models, "Checkpoint directory")->required();
  evaluate->add_option("--aes", eval_aes, "Directory of attack outputs")->required();

  // defend
  GlobalArgs defend_g;
  std::string defend_models, defend_aes;
  std::string defend_rates = "5200,5600,6000", defend_amps = "500,1000,2000";
  auto* defend = app.add_subcommand("defend", "Score AEs after input-transform defenses");
  add_global_flags(defend, defend_g);
  defend->add_option("--models", defend_models, "Checkpoint directory")->required();
  defend->add_option("--aes", defend_aes, "Directory of attack outputs")->required();
  defend->add_option("--rates", defend_rates, "Downsample rates (Hz, comma-separated)");
  defend->add_option("--amps", defend_amps, "Noise amplitudes (16-bit units)");

  // sweep-p
  GlobalArgs sp_g;
  AttackFlags sp_flags;
  std::string sp_models, sp_data, sp_values = "0,0.25,0.5,0.75,1";
  int sp_max_carriers = 5;
  auto* sweep_p_cmd = app.add_subcommand("sweep-p", "TR vs dropout rate for RGE and DGWE");
  add_global_flags(sweep_p_cmd, sp_g);
  sp_flags.add_to(sweep_p_cmd);
  sweep_p_cmd->add_option("--models", sp_models, "Checkpoint directory")->required();
  sweep_p_cmd->add_option("--data", sp_data, "Dataset directory with carriers")->required();
  sweep_p_cmd->add_option("--p-values", sp_values, "Dropout rates (comma-separated)");
  sweep_p_cmd->add_option("--max-carriers", sp_max_carriers, "Carrier count cap");

  // sweep-noise
  GlobalArgs sn_g;
  AttackFlags sn_flags;
  std::string sn_models, sn_data, sn_values = "0,4000,20000";
  int sn_max_carriers = 5;
  auto* sweep_noise_cmd =
      app.add_subcommand("sweep-noise", "TR vs smoothing noise level (16-bit units)");
  add_global_flags(sweep_noise_cmd, sn_g);
  sn_flags.add_to(sweep_noise_cmd);
  sweep_noise_cmd->add_option("--models", sn_models, "Checkpoint directory")->required();
  sweep_noise_cmd->add_option("--data", sn_data, "Dataset directory with carriers")->required();
  sweep_noise_cmd->add_option("--levels", sn_values, "Noise levels (comma-separated)");
  sweep_noise_cmd->add_option("--max-carriers", sn_max_carriers, "Carrier count cap");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed())
      return cmd_gen_data(gen_g, gen_classes, gen_per_class, gen_seconds, gen_carriers,
                          gen_carrier_seconds);
    if (train->parsed()) return cmd_train(train_g, train_data);
    if (attack->parsed())
      return cmd_attack(attack_g, attack_flags, attack_models, attack_carrier, attack_target);
    if (evaluate->parsed()) return cmd_evaluate(eval_g, eval_models, eval_aes);
    if (defend->parsed())
      return cmd_defend(defend_g, defend_models, defend_aes, defend_rates, defend_amps);
    if (sweep_p_cmd->parsed())
      return run_sweep(sp_g, sp_flags, sp_models, sp_data, sp_values, sp_max_carriers, false);
    if (sweep_noise_cmd->parsed())
      return run_sweep(sn_g, sn_flags, sn_models, sn_data, sn_values, sn_max_carriers, true);
  } catch (const TrainingDivergedError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  } catch (const ArgumentError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 2;
}
