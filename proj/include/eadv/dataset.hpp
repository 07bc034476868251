#pragma once

// Synthetic command-audio corpus. Each class is a distinct harmonic template
// (class-specific fundamental and harmonic amplitude profile) with random
// phase, gain jitter, and uniform background noise; carriers are class-free
// chord-plus-noise mixtures standing in for music segments.

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "eadv/audio.hpp"
#include "eadv/common.hpp"

namespace eadv {

struct CommandDataset {
  std::vector<AudioClip> clips;  // clip.label always set
  std::vector<int> labels;
  int num_classes = 0;
  int per_class = 0;
  double clip_seconds = 0.0;
  int sample_rate = 16000;
  std::uint64_t seed = 0;
};

namespace detail {

// Harmonic amplitude profiles, cycled for class indices >= 4. One dominant
// partial per profile keeps spectral centroids well separated.
inline const double kHarmonicProfiles[4][4] = {
    {1.00, 0.50, 0.25, 0.12},
    {0.40, 1.00, 0.40, 0.20},
    {0.30, 0.40, 1.00, 0.30},
    {0.25, 0.30, 0.50, 1.00},
};

inline AudioClip synthesize_command(int cls, double seconds, int sample_rate, Rng& rng) {
  AudioClip clip;
  clip.sample_rate = sample_rate;
  clip.label = cls;
  const std::size_t n = static_cast<std::size_t>(seconds * sample_rate);
  clip.samples.assign(n, 0.0);

  const double f0 = 200.0 + 60.0 * cls;
  const double* profile = kHarmonicProfiles[cls % 4];
  double phase[4], gain[4];
  for (int h = 0; h < 4; ++h) {
    phase[h] = rng.uniform(0.0, 2.0 * M_PI);
    gain[h] = 0.28 * profile[h] * rng.uniform(0.85, 1.15);
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / sample_rate;
    double s = 0.0;
    for (int h = 0; h < 4; ++h) s += gain[h] * std::sin(2.0 * M_PI * f0 * (h + 1) * t + phase[h]);
    clip.samples[i] = s;
  }
  for (double& s : clip.samples) s += rng.uniform(-0.05, 0.05);
  return clip;
}

}  // namespace detail

inline CommandDataset generate_dataset(std::uint64_t seed, int num_classes = 4,
                                       int per_class = 25, double clip_seconds = 4.0,
                                       int sample_rate = 16000) {
  if (num_classes < 2) throw ArgumentError("generate_dataset: need at least 2 classes");
  if (per_class < 1) throw ArgumentError("generate_dataset: need at least 1 clip per class");
  if (clip_seconds <= 0) throw ArgumentError("generate_dataset: clip_seconds must be positive");
  CommandDataset ds;
  ds.num_classes = num_classes;
  ds.per_class = per_class;
  ds.clip_seconds = clip_seconds;
  ds.sample_rate = sample_rate;
  ds.seed = seed;
  Rng rng(derive_seed(seed, 0xD5));
  for (int c = 0; c < num_classes; ++c) {
    for (int j = 0; j < per_class; ++j) {
      ds.clips.push_back(detail::synthesize_command(c, clip_seconds, sample_rate, rng));
      ds.labels.push_back(c);
    }
  }
  return ds;
}

// Class-free carriers: three detuned partial stacks with a slow amplitude
// envelope plus background noise. Frequencies are drawn off the class grid so
// no attack target is trivially satisfied by the clean carrier.
inline std::vector<AudioClip> generate_carriers(std::uint64_t seed, int count = 5,
                                                double clip_seconds = 4.0,
                                                int sample_rate = 16000) {
  if (count < 1) throw ArgumentError("generate_carriers: count must be >= 1");
  if (clip_seconds <= 0) throw ArgumentError("generate_carriers: clip_seconds must be positive");
  std::vector<AudioClip> carriers;
  Rng rng(derive_seed(seed, 0xCA));
  for (int k = 0; k < count; ++k) {
    AudioClip clip;
    clip.sample_rate = sample_rate;
    const std::size_t n = static_cast<std::size_t>(clip_seconds * sample_rate);
    clip.samples.assign(n, 0.0);
    for (int stack = 0; stack < 3; ++stack) {
      const double f = rng.uniform(150.0, 650.0);
      const double amp = rng.uniform(0.06, 0.16);
      const double ph1 = rng.uniform(0.0, 2.0 * M_PI);
      const double ph2 = rng.uniform(0.0, 2.0 * M_PI);
      const double env_hz = rng.uniform(0.5, 2.0);
      const double env_ph = rng.uniform(0.0, 2.0 * M_PI);
      for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / sample_rate;
        const double env = 0.7 + 0.3 * std::sin(2.0 * M_PI * env_hz * t + env_ph);
        clip.samples[i] += env * (amp * std::sin(2.0 * M_PI * f * t + ph1) +
                                  0.5 * amp * std::sin(2.0 * M_PI * 2.0 * f * t + ph2));
      }
    }
    for (double& s : clip.samples) s += rng.uniform(-0.03, 0.03);
    carriers.push_back(std::move(clip));
  }
  return carriers;
}

// ---- dataset directory layout -------------------------------------------
//
// <dir>/dataset.json          manifest: seed, shape, clip + carrier entries
// <dir>/clips/clip_cXX_sYY.wav
// <dir>/carriers/carrier_ZZ.wav
//
// Paths in the manifest are relative to <dir>, so two directories generated
// from the same seed are byte-identical.

inline void write_dataset(const CommandDataset& ds, const std::vector<AudioClip>& carriers,
                          const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(dir) / "clips", ec);
  if (ec) throw IoError("write_dataset: cannot create '" + dir + "/clips': " + ec.message());
  fs::create_directories(fs::path(dir) / "carriers", ec);
  if (ec) throw IoError("write_dataset: cannot create '" + dir + "/carriers': " + ec.message());

  nlohmann::json manifest;
  manifest["version"] = kToolVersion;
  manifest["seed"] = ds.seed;
  manifest["num_classes"] = ds.num_classes;
  manifest["per_class"] = ds.per_class;
  manifest["clip_seconds"] = ds.clip_seconds;
  manifest["sample_rate"] = ds.sample_rate;

  nlohmann::json clip_entries = nlohmann::json::array();
  for (std::size_t i = 0; i < ds.clips.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof(name), "clips/clip_c%02d_s%03d.wav", ds.labels[i],
                  static_cast<int>(i) % ds.per_class);
    save_wav(ds.clips[i], (fs::path(dir) / name).string());
    clip_entries.push_back({{"path", name}, {"label", ds.labels[i]}});
  }
  manifest["clips"] = clip_entries;

  nlohmann::json carrier_entries = nlohmann::json::array();
  for (std::size_t i = 0; i < carriers.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof(name), "carriers/carrier_%02d.wav", static_cast<int>(i));
    save_wav(carriers[i], (fs::path(dir) / name).string());
    carrier_entries.push_back(name);
  }
  manifest["carriers"] = carrier_entries;

  std::ofstream out(fs::path(dir) / "dataset.json", std::ios::trunc);
  if (!out) throw IoError("write_dataset: cannot write manifest in '" + dir + "'");
  out << manifest.dump(2) << "\n";
}

inline nlohmann::json load_dataset_manifest(const std::string& dir) {
  const auto path = std::filesystem::path(dir) / "dataset.json";
  std::ifstream in(path);
  if (!in) throw ArgumentError("dataset manifest not found: '" + path.string() + "'");
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed dataset manifest '" + path.string() + "': " + e.what());
  }
  return manifest;
}

inline CommandDataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const nlohmann::json manifest = load_dataset_manifest(dir);
  CommandDataset ds;
  ds.seed = manifest.at("seed").get<std::uint64_t>();
  ds.num_classes = manifest.at("num_classes").get<int>();
  ds.per_class = manifest.at("per_class").get<int>();
  ds.clip_seconds = manifest.at("clip_seconds").get<double>();
  ds.sample_rate = manifest.at("sample_rate").get<int>();
  for (const auto& entry : manifest.at("clips")) {
    AudioClip clip = load_wav((fs::path(dir) / entry.at("path").get<std::string>()).string());
    clip.label = entry.at("label").get<int>();
    ds.labels.push_back(*clip.label);
    ds.clips.push_back(std::move(clip));
  }
  return ds;
}

inline std::vector<AudioClip> load_carriers(const std::string& dir) {
  namespace fs = std::filesystem;
  const nlohmann::json manifest = load_dataset_manifest(dir);
  std::vector<AudioClip> carriers;
  for (const auto& entry : manifest.at("carriers"))
    carriers.push_back(load_wav((fs::path(dir) / entry.get<std::string>()).string()));
  return carriers;
}

}  // namespace eadv
