#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "facerig/fitter.hpp"
#include "facerig/model.hpp"
#include "facerig/rig.hpp"

namespace facerig {

/// Channels whose summed weight may not exceed `max_sum`.
struct RuleGroup {
  std::vector<int> channel_indices;
  double max_sum = 1.0;
};

struct RuleSet {
  std::vector<RuleGroup> groups;

  /// Throws ContractViolation for bad indices, duplicates within a group or
  /// max_sum outside (0, group size].
  void validate(int channel_count) const;
  [[nodiscard]] bool satisfied_by(const BlendWeights& alpha, double slack = 1e-12) const;
};

struct SamplePair {
  ExpressionParams gamma;
  BlendWeights alpha;
};

struct DatasetSplit {
  int train = 8000;
  int val = 1000;
  int test = 1000;

  [[nodiscard]] int total() const { return train + val + test; }
};

struct GeneratedDataset {
  std::string rig_name;
  std::uint64_t seed = 0;
  RuleSet rules;
  std::vector<SamplePair> train;
  std::vector<SamplePair> val;
  std::vector<SamplePair> test;
  /// Samples whose fit failed and were redrawn.
  int resampled = 0;

  [[nodiscard]] int channel_count() const;
};

/// Rescales each violated group multiplicatively so its sum equals max_sum.
/// Groups are repaired in order; a repair only lowers values, so earlier
/// groups stay satisfied.
BlendWeights repair_blendweights(BlendWeights alpha, const RuleSet& rules);

/// Uniform [0, 1] per channel followed by rule repair.
BlendWeights sample_blendweights(int channel_count, const RuleSet& rules, std::mt19937_64& rng);

/// RNG stream for one sample, independent of generation order.
std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t sample_index, std::uint64_t attempt = 0);

/// Frontal camera used for data generation: identity rotation, scale taking
/// the neutral rig landmark width to 200 units, neutral centroid at the origin.
Pose canonical_frontal_pose(const CharacterRig& rig);

/// Deforms the rig, projects through `camera`, fits gamma and pairs it with alpha.
SamplePair make_sample(const CharacterRig& rig, const MorphableModel& model, const BlendWeights& alpha,
                       const Pose& camera, const FitConfig& fit_config);

struct DatasetOptions {
  int count = 10000;
  DatasetSplit split;
  FitConfig fit_config;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

/// Character-dependent dataset: rule-constrained random weights, frontal
/// landmarks, fitted expression parameters. Deterministic for a fixed seed
/// and independent of `threads`.
GeneratedDataset generate_dataset(const CharacterRig& rig, const MorphableModel& model, const RuleSet& rules,
                                  const DatasetOptions& options);

}  // namespace facerig
