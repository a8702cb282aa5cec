#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "facerig/adapter.hpp"
#include "facerig/fitter.hpp"
#include "facerig/rig.hpp"
#include "facerig/track.hpp"

namespace facerig {

inline constexpr double kDefaultFps = 25.0;
inline constexpr int kDefaultKeyframeInterval = 5;

/// Precomputed 68-point landmarks per frame. Points are stored as in the file;
/// `convention` says whether y grows downward (image pixels) or upward.
struct LandmarkSequence {
  std::optional<double> fps;
  std::string convention = "image_y_down";
  std::vector<LandmarkSet2D> frames;

  /// Frames in the y-up camera frame used by the fitter.
  [[nodiscard]] std::vector<LandmarkSet2D> camera_frames() const;
};

/// Fits every frame, runs the adapter, then keyframes every 5th frame and
/// interpolates. Fitter failures are rethrown with the frame index prefixed.
/// When `frame_seconds` is given it receives the fit + inference wall time of
/// each frame.
FrameTrack estimate_track(const LandmarkSequence& landmarks, const MorphableModel& model, const IdentityParams& beta,
                          const AdapterNet& net, const FitConfig& fit_config = {}, unsigned threads = 1,
                          std::vector<double>* frame_seconds = nullptr);

/// {0, interval, 2*interval, ...} plus the last frame.
std::set<int> sample_keyframes(int frame_count, int interval = kDefaultKeyframeInterval);
void sample_keyframes(FrameTrack& track, int interval = kDefaultKeyframeInterval);

/// Segmented linear interpolation of alpha_current between consecutive keyframes.
void interpolate(FrameTrack& track);

/// Re-interpolates only the segments touching keyframe `index`.
void interpolate_around(FrameTrack& track, int index);

/// Inserts a keyframe (idempotent). A new keyframe snaps to alpha_auto plus
/// the applied preference offset, and its two segments are re-interpolated.
void add_keyframe(FrameTrack& track, int index);

/// Zero -> peak -> zero ramp. The peak sits at floor(total_frames / 2).
FrameTrack single_image_ramp(const BlendWeights& alpha_peak, int total_frames);

/// Expands a one-frame track into a ramp: weights follow single_image_ramp,
/// gamma scales with the same factor and the pose is copied.
FrameTrack expand_single_frame(const FrameTrack& single, int total_frames);

struct SyntheticSequenceOptions {
  int frames = 20;
  std::uint64_t seed = 0;
  double fps = kDefaultFps;
  /// Gaussian landmark noise in pixels.
  double noise = 0.0;
  /// Peak head yaw / pitch in radians.
  double max_yaw = 0.15;
  double max_pitch = 0.08;
  /// Fraction of channels that move during the clip.
  double active_fraction = 0.3;
};

/// Ground truth behind a synthetic landmark sequence.
struct SyntheticSequence {
  LandmarkSequence landmarks;  // image_y_down pixels around (320, 240)
  std::vector<BlendWeights> alphas;
  std::vector<Pose> poses;  // y-up camera frame
};

/// Smooth per-channel weight curves on `rig`, a gently turning head, projected
/// with a weak-perspective camera and written in image coordinates.
SyntheticSequence generate_synthetic_sequence(const CharacterRig& rig, const SyntheticSequenceOptions& options);

struct ExportedPose {
  Eigen::Vector3d axis_angle = Eigen::Vector3d::Zero();
  Eigen::Vector2d translation = Eigen::Vector2d::Zero();
  double scale = 1.0;
};

/// Contents of an exported animation file.
struct AnimationExport {
  std::string rig_name;
  double fps = kDefaultFps;
  std::vector<std::string> channels;
  std::vector<Eigen::VectorXd> frames;
  std::vector<ExportedPose> poses;
  std::vector<int> keyframes;
  PreferenceLedger adjustments;
};

ExportedPose export_pose(const Pose& pose);

AnimationExport make_animation_export(const FrameTrack& track, const CharacterRig& rig, double fps,
                                      const PreferenceLedger& ledger = {});

/// Writes the export file and returns what was written. Throws IoError when
/// the destination cannot be written.
AnimationExport export_track(const FrameTrack& track, const CharacterRig& rig, double fps,
                             const std::filesystem::path& destination, const PreferenceLedger& ledger = {});

}  // namespace facerig
