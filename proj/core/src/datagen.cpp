#include "facerig/datagen.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <iostream>
#include <mutex>
#include <string>
#include <thread>
#include <unordered_set>

#include "facerig/errors.hpp"

namespace facerig {

void RuleSet::validate(int channel_count) const {
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& group = groups[g];
    const std::string where = "rule group " + std::to_string(g);
    if (group.channel_indices.empty()) throw ContractViolation(where + " has no channels");
    std::unordered_set<int> seen;
    for (int idx : group.channel_indices) {
      if (idx < 0 || idx >= channel_count) {
        throw ContractViolation(where + ": channel " + std::to_string(idx) + " out of range");
      }
      if (!seen.insert(idx).second) throw ContractViolation(where + ": duplicate channel " + std::to_string(idx));
    }
    if (!(group.max_sum > 0.0 && group.max_sum <= static_cast<double>(group.channel_indices.size()))) {
      throw ContractViolation(where + ": max_sum must lie in (0, channel count]");
    }
  }
}

bool RuleSet::satisfied_by(const BlendWeights& alpha, double slack) const {
  for (const auto& group : groups) {
    double sum = 0.0;
    for (int idx : group.channel_indices) sum += alpha.values(idx);
    if (sum > group.max_sum + slack) return false;
  }
  return true;
}

int GeneratedDataset::channel_count() const {
  for (const auto* split : {&train, &val, &test}) {
    if (!split->empty()) return split->front().alpha.size();
  }
  return 0;
}

BlendWeights repair_blendweights(BlendWeights alpha, const RuleSet& rules) {
  for (const auto& group : rules.groups) {
    double sum = 0.0;
    for (int idx : group.channel_indices) sum += alpha.values(idx);
    if (sum > group.max_sum) {
      const double factor = group.max_sum / sum;
      for (int idx : group.channel_indices) alpha.values(idx) *= factor;
    }
  }
  return alpha;
}

BlendWeights sample_blendweights(int channel_count, const RuleSet& rules, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  BlendWeights alpha = BlendWeights::zero(channel_count);
  for (int k = 0; k < channel_count; ++k) alpha.values(k) = uniform(rng);
  return repair_blendweights(std::move(alpha), rules);
}

std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t sample_index, std::uint64_t attempt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(sample_index), static_cast<std::uint32_t>(sample_index >> 32),
                    static_cast<std::uint32_t>(attempt)};
  return std::mt19937_64(seq);
}

Pose canonical_frontal_pose(const CharacterRig& rig) {
  const LandmarkSet3D neutral = rig_landmarks(rig, BlendWeights::zero(rig.channel_count()));
  const double width = neutral.points.col(0).maxCoeff() - neutral.points.col(0).minCoeff();
  if (!(width > 0.0)) throw DegenerateGeometry("neutral rig landmarks have zero width");
  Pose pose;
  pose.scale = 200.0 / width;
  pose.translation = -pose.scale * neutral.points.leftCols<2>().colwise().mean().transpose();
  return pose;
}

SamplePair make_sample(const CharacterRig& rig, const MorphableModel& model, const BlendWeights& alpha,
                       const Pose& camera, const FitConfig& fit_config) {
  const LandmarkSet2D observed = project_weak_perspective(rig_landmarks(rig, alpha), camera);
  const FitResult result = fit(model, IdentityParams::zero(model.identity_dim()), observed, fit_config);
  if (!result.gamma.values.allFinite()) throw IllConditioned("fit produced non-finite expression parameters");
  return {result.gamma, alpha};
}

GeneratedDataset generate_dataset(const CharacterRig& rig, const MorphableModel& model, const RuleSet& rules,
                                  const DatasetOptions& options) {
  if (options.count < 1) throw ContractViolation("dataset count must be positive");
  if (options.split.train < 0 || options.split.val < 0 || options.split.test < 0 ||
      options.split.total() != options.count) {
    throw ContractViolation("split " + std::to_string(options.split.train) + "/" + std::to_string(options.split.val) +
                            "/" + std::to_string(options.split.test) + " does not sum to count " +
                            std::to_string(options.count));
  }
  if (!rig_is_usable(validate_rig(rig))) throw ContractViolation("rig failed validation");
  const int k = rig.channel_count();
  rules.validate(k);
  const Pose camera = canonical_frontal_pose(rig);

  const auto count = static_cast<std::size_t>(options.count);
  std::vector<SamplePair> samples(count);
  std::vector<int> attempts(count, 0);
  std::atomic<int> total_resampled{0};
  const int resample_budget = std::max(1, options.count / 100);

  auto produce = [&](std::size_t i) {
    for (std::uint64_t attempt = 0;; ++attempt) {
      auto rng = sample_rng(options.seed, i, attempt);
      BlendWeights alpha = sample_blendweights(k, rules, rng);
      try {
        samples[i] = make_sample(rig, model, alpha, camera, options.fit_config);
        attempts[i] = static_cast<int>(attempt);
        return;
      } catch (const Error& e) {
        std::clog << "datagen: sample " << i << " attempt " << attempt << " failed (" << e.what()
                  << "); redrawing\n";
        if (++total_resampled > resample_budget) {
          throw DatasetQualityError("more than 1% of samples needed resampling");
        }
      }
    }
  };

  if (options.threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) produce(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::atomic<bool> stop{false};
    auto worker = [&] {
      for (std::size_t i = next++; i < count && !stop; i = next++) {
        try {
          produce(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          stop = true;
        }
      }
    };
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < options.threads; ++t) pool.emplace_back(worker);
    pool.clear();
    if (failure) std::rethrow_exception(failure);
  }

  GeneratedDataset ds;
  ds.rig_name = rig.name;
  ds.seed = options.seed;
  ds.rules = rules;
  for (std::size_t i = 0; i < count; ++i) {
    if (!rules.satisfied_by(samples[i].alpha)) {
      throw DatasetQualityError("sample " + std::to_string(i) + " violates a rule group");
    }
    ds.resampled += attempts[i];
  }
  const auto train_end = samples.begin() + options.split.train;
  const auto val_end = train_end + options.split.val;
  ds.train.assign(samples.begin(), train_end);
  ds.val.assign(train_end, val_end);
  ds.test.assign(val_end, samples.end());
  return ds;
}

}  // namespace facerig
