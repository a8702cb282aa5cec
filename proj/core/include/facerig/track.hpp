#pragma once

#include <cstddef>
#include <cstdint>
#include <set>
#include <vector>

#include <Eigen/Core>

#include "facerig/fitter.hpp"
#include "facerig/model.hpp"
#include "facerig/rig.hpp"

namespace facerig {

struct TrackFrame {
  BlendWeights alpha_auto;     // adapter output (clamped to [0, 1])
  BlendWeights alpha_current;  // after interpolation, preferences and edits
  ExpressionParams gamma;
  Pose pose;
  bool has_gamma = true;
};

/// Per-frame coefficients plus keyframe / adjustment bookkeeping.
/// Frame 0 and the last frame are always keyframes.
struct FrameTrack {
  std::vector<TrackFrame> frames;
  std::set<int> keyframes;
  std::set<int> adjusted;
  /// Sum of every preference delta applied so far (per channel).
  Eigen::VectorXd applied_offset;

  [[nodiscard]] int frame_count() const { return static_cast<int>(frames.size()); }
  [[nodiscard]] int channel_count() const {
    return frames.empty() ? 0 : frames.front().alpha_current.size();
  }
};

struct PreferenceRecord {
  int frame_index = 0;
  int channel_index = 0;
  double auto_value = 0.0;      // alpha_current before this adjustment
  double adjusted_value = 0.0;
  /// Logical clock within the ledger; keeps exports reproducible.
  std::int64_t timestamp = 0;

  [[nodiscard]] double difference() const { return adjusted_value - auto_value; }
};

/// Append-only record of user adjustments. Records before `applied_through`
/// have already been folded into the track by an apply.
struct PreferenceLedger {
  std::vector<PreferenceRecord> records;
  std::size_t applied_through = 0;
  std::int64_t next_timestamp = 0;

  [[nodiscard]] bool applied() const { return !records.empty() && applied_through == records.size(); }
  [[nodiscard]] std::size_t pending() const { return records.size() - applied_through; }
};

}  // namespace facerig
