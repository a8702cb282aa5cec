#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "facerig/animation.hpp"
#include "facerig/errors.hpp"
#include "facerig/hitl.hpp"
#include "facerig/io.hpp"

// Project store and workflow operations behind the HTTP API.
//
// Layout on disk, one directory per project:
//   <root>/<id>/manifest.json      id and file names
//   <root>/<id>/{rig,model,checkpoint,landmarks}.json
//   <root>/<id>/state.json         status, track and ledger (rewritten atomically)
//   <root>/<id>/checkpoint.original.json   kept after the first finetune

namespace facerig {

enum class ProjectStatus { created, initialized, finetuning };
const char* to_string(ProjectStatus status);

/// Request-level failure. Routes turn it into an HTTP status plus a JSON body.
class ServiceError : public Error {
public:
  ServiceError(int http_status, std::string kind, const std::string& message, std::vector<std::string> details = {});

  [[nodiscard]] int http_status() const noexcept { return status_; }
  [[nodiscard]] const char* kind() const noexcept override { return kind_.c_str(); }
  [[nodiscard]] const std::vector<std::string>& details() const noexcept { return details_; }

private:
  int status_;
  std::string kind_;
  std::vector<std::string> details_;
};

struct ProjectInputs {
  CharacterRig rig;
  MorphableModel model;
  Checkpoint checkpoint;
  LandmarkSequence landmarks;
};

struct ProjectSummary {
  std::string id;
  ProjectStatus status = ProjectStatus::created;
  std::string rig_name;
  std::vector<std::string> channels;
  double fps = kDefaultFps;
  int landmark_frames = 0;
  int frame_count = 0;  // 0 until initialized
  std::vector<int> keyframes;
  std::vector<int> adjusted;
  std::size_t ledger_records = 0;
  std::size_t ledger_pending = 0;
  bool checkpoint_finetuned = false;
  std::optional<std::string> active_job;
  std::vector<std::string> warnings;
};

struct InitializeSummary {
  int frame_count = 0;
  std::vector<int> keyframes;
  std::optional<int> ramp_frames;
  double total_seconds = 0.0;
  double frame_mean_seconds = 0.0;
  double frame_std_seconds = 0.0;
};

enum class PointKind { plain, keyframe, adjusted };
const char* to_string(PointKind kind);

struct FrameDiagramPoint {
  int frame_index = 0;
  double mean_alpha = 0.0;
  PointKind kind = PointKind::plain;
};

struct FrameMesh {
  int frame_index = 0;
  Eigen::VectorXd vertices;
  std::vector<std::array<int, 3>> faces;
  std::vector<std::string> channels;
  Eigen::VectorXd alpha;
  ExportedPose pose;
};

struct PreferenceOutcome {
  bool applied = false;
  PreferenceDelta delta;
};

struct KeyframeOutcome {
  bool added = false;
  std::vector<int> keyframes;
};

enum class JobState { created, running, done, failed };
const char* to_string(JobState state);

struct JobInfo {
  std::string id;
  std::string project_id;
  std::vector<std::string> projects;
  JobState state = JobState::created;
  std::size_t pair_count = 0;
  int epochs = 0;
  std::optional<double> mae_before;
  std::optional<double> mae_after;
  std::string error;
};

struct FinetuneRequest {
  /// Extra projects whose adjusted frames join the training set.
  std::vector<std::string> extra_projects;
  FinetuneOptions options;
};

struct ExportPayload {
  std::string body;
  std::string hash;
};

/// 64-bit FNV-1a of the bytes, as 16 lowercase hex digits.
std::string content_hash(std::string_view bytes);

class ProjectService {
public:
  /// Opens (creating if needed) the store directory and loads existing projects.
  explicit ProjectService(std::filesystem::path root);
  /// Waits for running finetune jobs.
  ~ProjectService();
  ProjectService(const ProjectService&) = delete;
  ProjectService& operator=(const ProjectService&) = delete;

  [[nodiscard]] const std::filesystem::path& root() const;

  /// Cross-validates and persists the inputs. Never deduplicates.
  std::string create_project(ProjectInputs inputs);
  ProjectSummary summary(const std::string& id) const;
  std::vector<std::string> project_ids() const;

  /// Rebuilds the track from scratch with the current checkpoint; the ledger is kept.
  /// `ramp_frames` expands a single-frame sequence into a zero-peak-zero ramp.
  InitializeSummary initialize(const std::string& id, std::optional<int> ramp_frames = std::nullopt);

  std::vector<FrameDiagramPoint> diagram(const std::string& id) const;
  FrameMesh frame_mesh(const std::string& id, int frame) const;

  PreferenceRecord adjust(const std::string& id, int frame, int target, double value);
  PreferenceOutcome apply_preference(const std::string& id);
  /// Returns the number of ledger records dropped.
  std::size_t clear_preference(const std::string& id);
  KeyframeOutcome add_keyframe(const std::string& id, int frame);

  std::string start_finetune(const std::string& id, const FinetuneRequest& request = {});
  JobInfo job(const std::string& job_id) const;
  /// Blocks until no job is running.
  void wait_for_jobs();

  ExportPayload export_project(const std::string& id) const;

  struct Impl;

private:
  std::unique_ptr<Impl> impl_;
};

/// HTTP front end for a ProjectService.
class HttpServer {
public:
  explicit HttpServer(ProjectService& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds to host:port; port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port);
  /// Serves until stop() is called. Requires a successful bind().
  void serve();
  void stop();

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace facerig
