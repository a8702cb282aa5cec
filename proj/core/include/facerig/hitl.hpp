#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>

#include "facerig/adapter.hpp"
#include "facerig/datagen.hpp"
#include "facerig/track.hpp"

namespace facerig {

/// Averaged per-channel adjustment. `delta` is zero wherever `touched` is false.
struct PreferenceDelta {
  Eigen::VectorXd delta;
  std::vector<bool> touched;
};

/// Sets alpha_current[frame][channel] = new_value and logs the change with the
/// pre-adjustment value. The frame is marked adjusted, promoted to a keyframe,
/// and its neighbouring segments are re-interpolated.
void record_adjustment(PreferenceLedger& ledger, FrameTrack& track, int frame, int channel, double new_value);

/// Mean of (adjusted - auto) per channel over records not yet applied.
PreferenceDelta compute_preference(const PreferenceLedger& ledger, int channel_count);

/// Adds delta to every touched channel of every frame and clamps to [0, 1].
/// No re-interpolation happens afterwards.
void apply_preference(FrameTrack& track, const PreferenceDelta& pref);

/// compute + apply over the pending records, then marks the ledger applied.
/// Returns false (and changes nothing) when nothing is pending.
bool apply_pending_preference(FrameTrack& track, PreferenceLedger& ledger);

/// Drops pending and applied records. Frame values already edited stay.
void clear_preference(PreferenceLedger& ledger);

/// One (gamma, alpha_current) pair per adjusted frame of every session, in
/// session then frame order.
std::vector<SamplePair> assemble_finetune_set(std::span<const PreferenceLedger> ledgers,
                                              std::span<const FrameTrack> tracks);

struct FinetuneOptions {
  TrainConfig base;
  double learning_rate_factor = 0.1;
  int max_epochs = 50;

  [[nodiscard]] TrainConfig effective() const;
};

/// Continues training from `net` on `pairs`. Throws ContractViolation for an
/// empty set; the input net is never modified.
AdapterNet finetune(const AdapterNet& net, std::span<const SamplePair> pairs, const FinetuneOptions& options = {});

}  // namespace facerig
