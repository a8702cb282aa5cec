#include "facerig/animation.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <iterator>
#include <mutex>
#include <numbers>
#include <random>
#include <string>
#include <thread>

#include <Eigen/Geometry>

#include "facerig/datagen.hpp"
#include "facerig/errors.hpp"
#include "facerig/io.hpp"

namespace facerig {

namespace {

void check_frame(const FrameTrack& track, int index) {
  if (index < 0 || index >= track.frame_count()) {
    throw ContractViolation("frame index " + std::to_string(index) + " out of range [0, " +
                            std::to_string(track.frame_count()) + ")");
  }
}

Eigen::VectorXd clamp01(const Eigen::VectorXd& v) { return v.cwiseMax(0.0).cwiseMin(1.0); }

void interpolate_segment(FrameTrack& track, int a, int b) {
  const Eigen::VectorXd& lo = track.frames[a].alpha_current.values;
  const Eigen::VectorXd& hi = track.frames[b].alpha_current.values;
  const double span = static_cast<double>(b - a);
  for (int f = a + 1; f < b; ++f) {
    const double t = static_cast<double>(f - a) / span;
    track.frames[f].alpha_current.values = lo + t * (hi - lo);
  }
}

// Rethrows the active engine error with the frame index prefixed, preserving its type.
[[noreturn]] void rethrow_for_frame(std::size_t frame) {
  const std::string prefix = "frame " + std::to_string(frame) + ": ";
  try {
    throw;
  } catch (const DegenerateGeometry& e) {
    throw DegenerateGeometry(prefix + e.what());
  } catch (const IllConditioned& e) {
    throw IllConditioned(prefix + e.what());
  } catch (const ContractViolation& e) {
    throw ContractViolation(prefix + e.what());
  }
}

}  // namespace

std::vector<LandmarkSet2D> LandmarkSequence::camera_frames() const {
  if (convention != "image_y_down" && convention != "y_up") {
    throw ContractViolation("unknown landmark convention '" + convention + "'");
  }
  std::vector<LandmarkSet2D> out = frames;
  if (convention == "image_y_down") {
    for (auto& f : out) f.points.col(1) = -f.points.col(1);
  }
  return out;
}

FrameTrack estimate_track(const LandmarkSequence& landmarks, const MorphableModel& model, const IdentityParams& beta,
                          const AdapterNet& net, const FitConfig& fit_config, unsigned threads,
                          std::vector<double>* frame_seconds) {
  if (landmarks.frames.empty()) throw ContractViolation("landmark sequence has no frames");
  net.validate();
  const std::vector<LandmarkSet2D> observed = landmarks.camera_frames();
  const std::size_t n = observed.size();

  FrameTrack track;
  track.frames.resize(n);
  if (frame_seconds != nullptr) frame_seconds->assign(n, 0.0);
  auto estimate = [&](std::size_t i) {
    const auto start = std::chrono::steady_clock::now();
    try {
      const FitResult r = fit(model, beta, observed[i], fit_config);
      TrackFrame& frame = track.frames[i];
      frame.gamma = r.gamma;
      frame.pose = r.pose;
      frame.alpha_auto.values = clamp01(forward(net, r.gamma));
      frame.alpha_current = frame.alpha_auto;
    } catch (const Error&) {
      rethrow_for_frame(i);
    }
    if (frame_seconds != nullptr) {
      (*frame_seconds)[i] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
  };

  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) estimate(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::mutex failure_mutex;
    std::size_t failed_frame = n;
    std::exception_ptr failure;
    auto worker = [&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          estimate(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (i < failed_frame) {  // report the earliest failing frame, as a serial run would
            failed_frame = i;
            failure = std::current_exception();
          }
        }
      }
    };
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < std::min<std::size_t>(threads, n); ++t) pool.emplace_back(worker);
    pool.clear();
    if (failure) std::rethrow_exception(failure);
  }

  track.applied_offset = Eigen::VectorXd::Zero(net.config.out_dim);
  sample_keyframes(track, kDefaultKeyframeInterval);
  interpolate(track);
  return track;
}

std::set<int> sample_keyframes(int frame_count, int interval) {
  if (interval < 1) throw ContractViolation("keyframe interval must be >= 1");
  if (frame_count < 1) throw ContractViolation("track has no frames");
  std::set<int> keys;
  for (int f = 0; f < frame_count; f += interval) keys.insert(f);
  keys.insert(frame_count - 1);
  return keys;
}

void sample_keyframes(FrameTrack& track, int interval) {
  track.keyframes = sample_keyframes(track.frame_count(), interval);
}

void interpolate(FrameTrack& track) {
  if (track.frames.empty()) return;
  if (!track.keyframes.contains(0) || !track.keyframes.contains(track.frame_count() - 1)) {
    throw ContractViolation("keyframes must include the first and last frame");
  }
  for (auto it = track.keyframes.begin(); std::next(it) != track.keyframes.end(); ++it) {
    interpolate_segment(track, *it, *std::next(it));
  }
}

void interpolate_around(FrameTrack& track, int index) {
  check_frame(track, index);
  const auto it = track.keyframes.find(index);
  if (it == track.keyframes.end()) throw ContractViolation("frame " + std::to_string(index) + " is not a keyframe");
  if (it != track.keyframes.begin()) interpolate_segment(track, *std::prev(it), index);
  if (const auto after = std::next(it); after != track.keyframes.end()) interpolate_segment(track, index, *after);
}

void add_keyframe(FrameTrack& track, int index) {
  check_frame(track, index);
  if (!track.keyframes.insert(index).second) return;
  TrackFrame& frame = track.frames[index];
  Eigen::VectorXd snapped = frame.alpha_auto.values;
  if (track.applied_offset.size() == snapped.size()) snapped += track.applied_offset;
  frame.alpha_current.values = clamp01(snapped);
  interpolate_around(track, index);
}

FrameTrack single_image_ramp(const BlendWeights& alpha_peak, int total_frames) {
  if (total_frames < 3) throw ContractViolation("a ramp needs at least 3 frames, got " + std::to_string(total_frames));
  alpha_peak.validate();
  const int peak = total_frames / 2;
  const int last = total_frames - 1;
  FrameTrack track;
  track.frames.resize(static_cast<std::size_t>(total_frames));
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(alpha_peak.size());
  for (int f = 0; f < total_frames; ++f) {
    Eigen::VectorXd v;
    if (f == 0 || f == last) {
      v = zero;
    } else if (f <= peak) {
      v = zero + (static_cast<double>(f) / peak) * (alpha_peak.values - zero);
    } else {
      v = alpha_peak.values + (static_cast<double>(f - peak) / (last - peak)) * (zero - alpha_peak.values);
    }
    track.frames[f].alpha_auto.values = v;
    track.frames[f].alpha_current.values = v;
    track.frames[f].has_gamma = false;
  }
  track.keyframes = {0, peak, last};
  track.applied_offset = zero;
  return track;
}

FrameTrack expand_single_frame(const FrameTrack& single, int total_frames) {
  if (single.frame_count() != 1) throw ContractViolation("ramp expansion needs a one-frame track");
  const TrackFrame& src = single.frames.front();
  FrameTrack track = single_image_ramp(src.alpha_auto, total_frames);
  const double peak = static_cast<double>(total_frames / 2);
  const double last = static_cast<double>(total_frames - 1);
  for (int f = 0; f < total_frames; ++f) {
    const double t = f <= peak ? f / peak : (last - f) / (last - peak);
    TrackFrame& dst = track.frames[f];
    dst.pose = src.pose;
    dst.gamma.values = t * src.gamma.values;
    dst.has_gamma = src.has_gamma;
  }
  track.applied_offset = single.applied_offset.size() ? single.applied_offset : track.applied_offset;
  return track;
}

ExportedPose export_pose(const Pose& pose) {
  const Eigen::AngleAxisd aa(pose.rotation);
  return {aa.axis() * aa.angle(), pose.translation, pose.scale};
}

AnimationExport make_animation_export(const FrameTrack& track, const CharacterRig& rig, double fps,
                                      const PreferenceLedger& ledger) {
  if (track.channel_count() != rig.channel_count()) {
    throw ContractViolation("track has " + std::to_string(track.channel_count()) + " channels, rig has " +
                            std::to_string(rig.channel_count()));
  }
  if (!(fps > 0.0)) throw ContractViolation("fps must be positive");
  AnimationExport out;
  out.rig_name = rig.name;
  out.fps = fps;
  out.channels = rig.channel_names();
  for (const auto& f : track.frames) {
    out.frames.push_back(f.alpha_current.values);
    out.poses.push_back(export_pose(f.pose));
  }
  out.keyframes.assign(track.keyframes.begin(), track.keyframes.end());
  out.adjustments = ledger;
  return out;
}

AnimationExport export_track(const FrameTrack& track, const CharacterRig& rig, double fps,
                             const std::filesystem::path& destination, const PreferenceLedger& ledger) {
  AnimationExport out = make_animation_export(track, rig, fps, ledger);
  save_animation_export(destination, out);
  return out;
}

SyntheticSequence generate_synthetic_sequence(const CharacterRig& rig, const SyntheticSequenceOptions& options) {
  if (options.frames < 1) throw ContractViolation("synthetic sequence needs at least one frame");
  if (!(options.fps > 0.0)) throw ContractViolation("fps must be positive");
  if (!(options.noise >= 0.0)) throw ContractViolation("noise must be non-negative");
  const int k = rig.channel_count();
  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  // One raised-cosine bump train per active channel.
  Eigen::VectorXd amplitude = Eigen::VectorXd::Zero(k), cycles(k), phase(k);
  for (int c = 0; c < k; ++c) {
    if (unit(rng) < options.active_fraction) amplitude(c) = 0.3 + 0.7 * unit(rng);
    cycles(c) = 0.5 + 1.5 * unit(rng);
    phase(c) = 2.0 * std::numbers::pi * unit(rng);
  }
  const Pose frontal = canonical_frontal_pose(rig);
  std::normal_distribution<double> noise(0.0, 1.0);

  SyntheticSequence out;
  out.landmarks.fps = options.fps;
  out.landmarks.convention = "image_y_down";
  const double span = std::max(1, options.frames - 1);
  for (int f = 0; f < options.frames; ++f) {
    const double t = f / span;
    BlendWeights alpha = BlendWeights::zero(k);
    for (int c = 0; c < k; ++c) {
      alpha.values(c) = amplitude(c) * 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * cycles(c) * t + phase(c)));
    }
    Pose pose = frontal;
    const double yaw = options.max_yaw * std::sin(2.0 * std::numbers::pi * t);
    const double pitch = options.max_pitch * std::sin(std::numbers::pi * t);
    pose.rotation = (Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitY()) * Eigen::AngleAxisd(pitch, Eigen::Vector3d::UnitX()))
                        .toRotationMatrix();
    pose.translation += Eigen::Vector2d(320.0, -240.0);

    LandmarkSet2D image = project_weak_perspective(rig_landmarks(rig, alpha), pose);
    if (options.noise > 0.0) {
      for (int i = 0; i < kLandmarkCount; ++i) {
        for (int d = 0; d < 2; ++d) image.points(i, d) += options.noise * noise(rng);
      }
    }
    image.points.col(1) = -image.points.col(1);
    out.landmarks.frames.push_back(image);
    out.alphas.push_back(std::move(alpha));
    out.poses.push_back(pose);
  }
  return out;
}

}  // namespace facerig
