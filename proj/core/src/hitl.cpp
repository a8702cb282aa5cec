#include "facerig/hitl.hpp"

#include <algorithm>
#include <set>
#include <string>

#include "facerig/animation.hpp"
#include "facerig/errors.hpp"

namespace facerig {

void record_adjustment(PreferenceLedger& ledger, FrameTrack& track, int frame, int channel, double new_value) {
  if (frame < 0 || frame >= track.frame_count()) {
    throw ContractViolation("frame " + std::to_string(frame) + " out of range [0, " +
                            std::to_string(track.frame_count()) + ")");
  }
  if (channel < 0 || channel >= track.channel_count()) {
    throw ContractViolation("target " + std::to_string(channel) + " out of range [0, " +
                            std::to_string(track.channel_count()) + ")");
  }
  if (!(new_value >= 0.0 && new_value <= 1.0)) {
    throw ContractViolation("value " + std::to_string(new_value) + " must lie in [0, 1]");
  }
  double& cell = track.frames[frame].alpha_current.values(channel);
  ledger.records.push_back({frame, channel, cell, new_value, ledger.next_timestamp++});
  cell = new_value;
  track.adjusted.insert(frame);
  track.keyframes.insert(frame);
  interpolate_around(track, frame);
}

PreferenceDelta compute_preference(const PreferenceLedger& ledger, int channel_count) {
  PreferenceDelta pref{Eigen::VectorXd::Zero(channel_count), std::vector<bool>(channel_count, false)};
  std::vector<int> counts(channel_count, 0);
  for (std::size_t i = ledger.applied_through; i < ledger.records.size(); ++i) {
    const auto& r = ledger.records[i];
    if (r.channel_index < 0 || r.channel_index >= channel_count) {
      throw ContractViolation("ledger record targets channel " + std::to_string(r.channel_index));
    }
    pref.delta(r.channel_index) += r.difference();
    ++counts[r.channel_index];
  }
  for (int k = 0; k < channel_count; ++k) {
    if (counts[k] > 0) {
      pref.delta(k) /= counts[k];
      pref.touched[k] = true;
    }
  }
  return pref;
}

void apply_preference(FrameTrack& track, const PreferenceDelta& pref) {
  const int k = track.channel_count();
  if (pref.delta.size() != k || static_cast<int>(pref.touched.size()) != k) {
    throw ContractViolation("preference has " + std::to_string(pref.delta.size()) + " channels, track has " +
                            std::to_string(k));
  }
  if (track.applied_offset.size() != k) track.applied_offset = Eigen::VectorXd::Zero(k);
  for (int c = 0; c < k; ++c) {
    if (!pref.touched[c]) continue;
    for (auto& frame : track.frames) {
      double& v = frame.alpha_current.values(c);
      v = std::clamp(v + pref.delta(c), 0.0, 1.0);
    }
    track.applied_offset(c) += pref.delta(c);
  }
}

bool apply_pending_preference(FrameTrack& track, PreferenceLedger& ledger) {
  if (ledger.pending() == 0) return false;
  apply_preference(track, compute_preference(ledger, track.channel_count()));
  ledger.applied_through = ledger.records.size();
  return true;
}

void clear_preference(PreferenceLedger& ledger) {
  ledger.records.clear();
  ledger.applied_through = 0;
}

std::vector<SamplePair> assemble_finetune_set(std::span<const PreferenceLedger> ledgers,
                                              std::span<const FrameTrack> tracks) {
  if (ledgers.size() != tracks.size()) {
    throw ContractViolation("got " + std::to_string(ledgers.size()) + " ledgers for " + std::to_string(tracks.size()) +
                            " tracks");
  }
  std::vector<SamplePair> pairs;
  for (std::size_t s = 0; s < tracks.size(); ++s) {
    const FrameTrack& track = tracks[s];
    std::set<int> frames = track.adjusted;
    for (const auto& r : ledgers[s].records) frames.insert(r.frame_index);
    for (int f : frames) {
      if (f < 0 || f >= track.frame_count()) {
        throw ContractViolation("adjusted frame " + std::to_string(f) + " is outside the track");
      }
      const TrackFrame& frame = track.frames[f];
      if (!frame.has_gamma || frame.gamma.values.size() != kExpressionDim) {
        throw ContractViolation("adjusted frame " + std::to_string(f) + " has no expression parameters");
      }
      pairs.push_back({frame.gamma, frame.alpha_current});
    }
  }
  return pairs;
}

TrainConfig FinetuneOptions::effective() const {
  TrainConfig tc = base;
  tc.learning_rate = base.learning_rate * learning_rate_factor;
  tc.epochs = std::min(base.epochs, max_epochs);
  return tc;
}

AdapterNet finetune(const AdapterNet& net, std::span<const SamplePair> pairs, const FinetuneOptions& options) {
  if (pairs.empty()) throw ContractViolation("finetuning needs at least one adjusted frame");
  return continue_training(net, pairs, options.effective());
}

}  // namespace facerig
