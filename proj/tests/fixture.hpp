#pragma once

// Shared test fixture: a small command dataset plus trained surrogate and
// held-out target models, built once per test binary. Clips are kept short
// so the whole fixture trains in a few seconds.

#include <memory>
#include <vector>

#include "eadv/eadv.hpp"

namespace testfix {

struct Fixture {
  eadv::CommandDataset dataset;
  std::vector<eadv::SurrogateModel> surrogates;  // meanpool_linear, mlp, conv1d
  std::vector<eadv::BlackBoxTarget> targets;     // held-out mlp + conv1d
  std::vector<eadv::AudioClip> carriers;

  std::vector<const eadv::SurrogateModel*> surrogate_ptrs() const {
    std::vector<const eadv::SurrogateModel*> out;
    for (const auto& m : surrogates) out.push_back(&m);
    return out;
  }
  std::vector<const eadv::BlackBoxTarget*> target_ptrs() const {
    std::vector<const eadv::BlackBoxTarget*> out;
    for (const auto& t : targets) out.push_back(&t);
    return out;
  }
};

inline const Fixture& fixture() {
  static const Fixture fix = [] {
    using namespace eadv;
    Fixture f;
    f.dataset = generate_dataset(/*seed=*/9001, /*num_classes=*/4, /*per_class=*/8,
                                 /*clip_seconds=*/0.5);
    f.surrogates = train_surrogates(f.dataset, {Arch::MeanpoolLinear, Arch::Mlp, Arch::Conv1d},
                                    /*train_seed=*/501);
    f.targets.emplace_back(train_model(Arch::Mlp, f.dataset, derive_seed(501, 77)), "target_mlp");
    f.targets.emplace_back(train_model(Arch::Conv1d, f.dataset, derive_seed(501, 78)),
                           "target_conv1d");
    f.carriers = generate_carriers(/*seed=*/31337, /*count=*/3, /*clip_seconds=*/0.5);
    return f;
  }();
  return fix;
}

}  // namespace testfix
