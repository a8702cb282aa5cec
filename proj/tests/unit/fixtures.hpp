#pragma once

#include "facerig/service.hpp"
#include "helpers.hpp"

namespace facerig::testing {

/// Small but complete project: synthetic model and rig, exact adapter,
/// noiseless synthetic clip.
inline ProjectInputs project_inputs(int frames = 20, std::uint64_t seed = 3) {
  ProjectInputs in;
  in.model = small_model();
  in.rig = small_rig();
  in.checkpoint.net = oracle_adapter(in.model, in.rig);
  SyntheticSequenceOptions so;
  so.frames = frames;
  so.seed = seed;
  so.active_fraction = 0.6;
  in.landmarks = generate_synthetic_sequence(in.rig, so).landmarks;
  return in;
}

}  // namespace facerig::testing
