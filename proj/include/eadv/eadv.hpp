#pragma once

// Umbrella header for the ensemble audio-attack library.

#include "eadv/attack.hpp"
#include "eadv/audio.hpp"
#include "eadv/common.hpp"
#include "eadv/dataset.hpp"
#include "eadv/eval.hpp"
#include "eadv/features.hpp"
#include "eadv/grad.hpp"
#include "eadv/model.hpp"
#include "eadv/optim.hpp"
