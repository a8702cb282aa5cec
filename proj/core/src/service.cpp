#include "facerig/service.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <functional>
#include <cstdio>
#include <iostream>
#include <map>
#include <mutex>
#include <numeric>
#include <shared_mutex>
#include <thread>

#include "json_codec.hpp"

namespace facerig {

namespace fs = std::filesystem;
using codec::json;

const char* to_string(ProjectStatus status) {
  switch (status) {
    case ProjectStatus::created: return "created";
    case ProjectStatus::initialized: return "initialized";
    case ProjectStatus::finetuning: return "finetuning";
  }
  return "created";
}

const char* to_string(PointKind kind) {
  switch (kind) {
    case PointKind::plain: return "plain";
    case PointKind::keyframe: return "keyframe";
    case PointKind::adjusted: return "adjusted";
  }
  return "plain";
}

const char* to_string(JobState state) {
  switch (state) {
    case JobState::created: return "created";
    case JobState::running: return "running";
    case JobState::done: return "done";
    case JobState::failed: return "failed";
  }
  return "created";
}

ServiceError::ServiceError(int http_status, std::string kind, const std::string& message,
                           std::vector<std::string> details)
    : Error(message), status_(http_status), kind_(std::move(kind)), details_(std::move(details)) {}

std::string content_hash(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

constexpr const char* kManifest = "manifest.json";
constexpr const char* kState = "state.json";
constexpr const char* kRigFile = "rig.json";
constexpr const char* kModelFile = "model.json";
constexpr const char* kCheckpointFile = "checkpoint.json";
constexpr const char* kOriginalCheckpointFile = "checkpoint.original.json";
constexpr const char* kLandmarksFile = "landmarks.json";

ServiceError not_found(const std::string& what) { return {404, "not_found", what + " not found"}; }

ProjectStatus parse_status(const std::string& s) {
  if (s == "created") return ProjectStatus::created;
  if (s == "initialized") return ProjectStatus::initialized;
  if (s == "finetuning") return ProjectStatus::finetuning;
  throw ContractViolation("unknown project status '" + s + "'");
}

struct ProjectState {
  ProjectStatus status = ProjectStatus::created;
  std::optional<FrameTrack> track;
  PreferenceLedger ledger;
};

struct Slot {
  std::string id;
  fs::path dir;
  mutable std::shared_mutex mutex;
  CharacterRig rig;
  MorphableModel model;
  Checkpoint checkpoint;
  LandmarkSequence landmarks;
  ProjectState state;
  std::vector<std::string> warnings;
  bool finetuned = false;
  std::optional<std::string> active_job;
  ProjectStatus status_before_job = ProjectStatus::created;

  [[nodiscard]] double fps() const { return landmarks.fps.value_or(kDefaultFps); }
};

std::string state_to_json(const ProjectState& state) {
  json j = {{"status", to_string(state.status)}, {"ledger", codec::to_json(state.ledger)}};
  j["track"] = state.track ? codec::to_json(*state.track) : json(nullptr);
  return j.dump();
}

ProjectState state_from_json(std::string_view text) {
  const json j = codec::parse(text);
  ProjectState state;
  state.status = parse_status(j.at("status").get<std::string>());
  state.ledger = codec::ledger_from(j.at("ledger"));
  if (!j.at("track").is_null()) state.track = codec::track_from(j.at("track"));
  // A job cannot survive a restart.
  if (state.status == ProjectStatus::finetuning) {
    state.status = state.track ? ProjectStatus::initialized : ProjectStatus::created;
  }
  return state;
}

void write_state(const Slot& slot, const ProjectState& state) {
  write_text_file_atomic(slot.dir / kState, state_to_json(state));
}

std::vector<std::string> rig_warnings(const CharacterRig& rig) {
  std::vector<std::string> out;
  for (const auto& d : validate_rig(rig)) {
    if (d.severity == RigDiagnostic::Severity::warning) out.push_back(d.field + ": " + d.message);
  }
  return out;
}

void validate_inputs(const ProjectInputs& in) {
  std::vector<std::string> errors;
  for (const auto& d : validate_rig(in.rig)) {
    if (d.severity == RigDiagnostic::Severity::error) errors.push_back("rig." + d.field + ": " + d.message);
  }
  if (!errors.empty()) throw ServiceError(400, "invalid_rig", "rig failed validation", errors);

  const AdapterConfig& cfg = in.checkpoint.net.config;
  if (cfg.out_dim != in.rig.channel_count()) {
    throw ServiceError(400, "k_mismatch",
                       "checkpoint predicts K=" + std::to_string(cfg.out_dim) + " channels but rig '" + in.rig.name +
                           "' has K=" + std::to_string(in.rig.channel_count()),
                       {"checkpoint.config.out_dim: " + std::to_string(cfg.out_dim),
                        "rig.blendshapes: " + std::to_string(in.rig.channel_count())});
  }
  if (cfg.in_dim != kExpressionDim) {
    throw ServiceError(400, "invalid_checkpoint", "checkpoint input width must be 64",
                       {"checkpoint.config.in_dim: " + std::to_string(cfg.in_dim)});
  }
  if (in.landmarks.frames.empty()) {
    throw ServiceError(400, "invalid_landmarks", "landmark sequence has no frames", {"landmarks.frames"});
  }
}

void check_frame(const FrameTrack& track, int frame, const char* field) {
  if (frame < 0 || frame >= track.frame_count()) {
    throw ServiceError(400, "out_of_range",
                       std::string(field) + " " + std::to_string(frame) + " is outside [0, " +
                           std::to_string(track.frame_count() - 1) + "]",
                       {field});
  }
}

template <typename State>
auto& require_track(State& state) {
  if (!state.track) throw ServiceError(409, "not_initialized", "project has not been initialized");
  return *state.track;
}

}  // namespace

struct ProjectService::Impl {
  fs::path root;

  mutable std::mutex registry_mutex;
  std::map<std::string, std::shared_ptr<Slot>> projects;
  std::uint64_t next_project = 1;

  mutable std::mutex jobs_mutex;
  std::condition_variable jobs_cv;
  std::map<std::string, JobInfo> jobs;
  std::uint64_t next_job = 1;
  int active_jobs = 0;
  std::vector<std::jthread> workers;

  std::shared_ptr<Slot> slot(const std::string& id) const {
    std::lock_guard lock(registry_mutex);
    auto it = projects.find(id);
    if (it == projects.end()) throw not_found("project '" + id + "'");
    return it->second;
  }

  void load_existing() {
    for (const auto& entry : fs::directory_iterator(root)) {
      if (!entry.is_directory()) continue;
      const std::string name = entry.path().filename().string();
      if (name.starts_with(".")) {
        std::error_code ec;
        fs::remove_all(entry.path(), ec);  // interrupted create
        continue;
      }
      if (!fs::exists(entry.path() / kManifest)) continue;
      try {
        auto s = std::make_shared<Slot>();
        const json manifest = codec::parse(read_text_file(entry.path() / kManifest));
        s->id = manifest.at("id").get<std::string>();
        s->dir = entry.path();
        s->rig = load_rig(s->dir / kRigFile);
        s->model = load_model(s->dir / kModelFile);
        s->checkpoint = load_checkpoint(s->dir / kCheckpointFile);
        s->landmarks = load_landmarks(s->dir / kLandmarksFile);
        s->state = state_from_json(read_text_file(s->dir / kState));
        s->warnings = rig_warnings(s->rig);
        s->finetuned = fs::exists(s->dir / kOriginalCheckpointFile);
        if (manifest.contains("sequence")) {
          next_project = std::max(next_project, manifest.at("sequence").get<std::uint64_t>() + 1);
        }
        projects[s->id] = std::move(s);
      } catch (const std::exception& e) {
        std::clog << "facerig: skipping project directory '" << entry.path().string() << "': " << e.what() << '\n';
      }
    }
  }

  template <typename F>
  auto mutate(const std::string& id, F&& f) {
    auto s = slot(id);
    std::unique_lock lock(s->mutex);
    ProjectState next = s->state;
    auto result = f(*s, next);
    write_state(*s, next);
    s->state = std::move(next);
    return result;
  }

  void set_job(const std::string& job_id, const std::function<void(JobInfo&)>& update) {
    std::lock_guard lock(jobs_mutex);
    update(jobs.at(job_id));
  }

  void finish_job() {
    {
      std::lock_guard lock(jobs_mutex);
      --active_jobs;
    }
    jobs_cv.notify_all();
  }

  void run_finetune(const std::string& job_id, std::shared_ptr<Slot> s, AdapterNet start,
                    std::vector<SamplePair> pairs, FinetuneOptions options) {
    set_job(job_id, [](JobInfo& j) { j.state = JobState::running; });
    try {
      const double before = evaluate_mae(start, pairs);
      AdapterNet tuned = finetune(start, pairs, options);
      const double after = evaluate_mae(tuned, pairs);
      {
        std::unique_lock lock(s->mutex);
        const fs::path original = s->dir / kOriginalCheckpointFile;
        if (!fs::exists(original)) write_text_file_atomic(original, read_text_file(s->dir / kCheckpointFile));
        Checkpoint next = s->checkpoint;
        next.net = std::move(tuned);
        save_checkpoint(s->dir / kCheckpointFile, next);
        s->checkpoint = std::move(next);
        s->finetuned = true;
        ProjectState state = s->state;
        state.status = s->status_before_job;
        write_state(*s, state);
        s->state = std::move(state);
        s->active_job.reset();
      }
      set_job(job_id, [&](JobInfo& j) {
        j.mae_before = before;
        j.mae_after = after;
        j.state = JobState::done;
      });
    } catch (const std::exception& e) {
      {
        std::unique_lock lock(s->mutex);
        s->state.status = s->status_before_job;
        try {
          write_state(*s, s->state);
        } catch (const std::exception&) {
        }
        s->active_job.reset();
      }
      set_job(job_id, [&](JobInfo& j) {
        j.state = JobState::failed;
        j.error = e.what();
      });
    }
    finish_job();
  }
};

ProjectService::ProjectService(fs::path root) : impl_(std::make_unique<Impl>()) {
  impl_->root = std::move(root);
  std::error_code ec;
  fs::create_directories(impl_->root, ec);
  if (ec || !fs::is_directory(impl_->root)) {
    throw IoError("cannot create project store '" + impl_->root.string() + "'");
  }
  impl_->load_existing();
}

ProjectService::~ProjectService() {
  wait_for_jobs();
  impl_->workers.clear();
}

const fs::path& ProjectService::root() const { return impl_->root; }

std::string ProjectService::create_project(ProjectInputs inputs) {
  validate_inputs(inputs);
  std::uint64_t seq = 0;
  {
    std::lock_guard lock(impl_->registry_mutex);
    seq = impl_->next_project++;
  }
  char id_buf[16];
  std::snprintf(id_buf, sizeof id_buf, "p%06llu", static_cast<unsigned long long>(seq));
  const std::string id = id_buf;

  auto s = std::make_shared<Slot>();
  s->id = id;
  s->dir = impl_->root / id;
  s->rig = std::move(inputs.rig);
  s->model = std::move(inputs.model);
  s->checkpoint = std::move(inputs.checkpoint);
  s->landmarks = std::move(inputs.landmarks);
  s->warnings = rig_warnings(s->rig);

  // Stage everything in a hidden directory and rename it into place.
  const fs::path staging = impl_->root / ("." + id + ".tmp");
  std::error_code ec;
  fs::remove_all(staging, ec);
  fs::create_directories(staging, ec);
  if (ec) throw IoError("cannot create '" + staging.string() + "'");
  try {
    save_rig(staging / kRigFile, s->rig);
    save_model(staging / kModelFile, s->model);
    save_checkpoint(staging / kCheckpointFile, s->checkpoint);
    save_landmarks(staging / kLandmarksFile, s->landmarks);
    write_text_file_atomic(staging / kState, state_to_json(s->state));
    const json manifest = {{"id", id},
                           {"sequence", seq},
                           {"rig", kRigFile},
                           {"model", kModelFile},
                           {"checkpoint", kCheckpointFile},
                           {"landmarks", kLandmarksFile},
                           {"state", kState}};
    write_text_file_atomic(staging / kManifest, manifest.dump(2));
    fs::rename(staging, s->dir);
  } catch (const std::exception& e) {
    fs::remove_all(staging, ec);
    throw IoError("cannot persist project '" + id + "': " + e.what());
  }

  std::lock_guard lock(impl_->registry_mutex);
  impl_->projects[id] = std::move(s);
  return id;
}

std::vector<std::string> ProjectService::project_ids() const {
  std::lock_guard lock(impl_->registry_mutex);
  std::vector<std::string> ids;
  for (const auto& [id, slot] : impl_->projects) ids.push_back(id);
  return ids;
}

ProjectSummary ProjectService::summary(const std::string& id) const {
  auto s = impl_->slot(id);
  std::shared_lock lock(s->mutex);
  ProjectSummary out;
  out.id = s->id;
  out.status = s->state.status;
  out.rig_name = s->rig.name;
  out.channels = s->rig.channel_names();
  out.fps = s->fps();
  out.landmark_frames = static_cast<int>(s->landmarks.frames.size());
  if (s->state.track) {
    const FrameTrack& t = *s->state.track;
    out.frame_count = t.frame_count();
    out.keyframes.assign(t.keyframes.begin(), t.keyframes.end());
    out.adjusted.assign(t.adjusted.begin(), t.adjusted.end());
  }
  out.ledger_records = s->state.ledger.records.size();
  out.ledger_pending = s->state.ledger.pending();
  out.checkpoint_finetuned = s->finetuned;
  out.active_job = s->active_job;
  out.warnings = s->warnings;
  return out;
}

InitializeSummary ProjectService::initialize(const std::string& id, std::optional<int> ramp_frames) {
  return impl_->mutate(id, [&](Slot& s, ProjectState& next) {
    if (s.state.status == ProjectStatus::finetuning) {
      throw ServiceError(409, "job_running", "project is finetuning; initialize after the job finishes");
    }
    const int input_frames = static_cast<int>(s.landmarks.frames.size());
    if (ramp_frames) {
      if (input_frames != 1) {
        throw ServiceError(400, "invalid_argument", "ramp_frames applies only to single-image inputs", {"ramp_frames"});
      }
      if (*ramp_frames < 3) throw ServiceError(400, "out_of_range", "ramp_frames must be at least 3", {"ramp_frames"});
    }

    std::vector<double> seconds;
    const auto start = std::chrono::steady_clock::now();
    FrameTrack track;
    try {
      track = estimate_track(s.landmarks, s.model, IdentityParams::zero(s.model.identity_dim()), s.checkpoint.net, {},
                             1, &seconds);
    } catch (const DegenerateGeometry& e) {
      throw ServiceError(422, e.kind(), e.what());
    } catch (const IllConditioned& e) {
      throw ServiceError(422, e.kind(), e.what());
    }
    if (ramp_frames) track = expand_single_frame(track, *ramp_frames);
    const double total = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    InitializeSummary out;
    out.frame_count = track.frame_count();
    out.keyframes.assign(track.keyframes.begin(), track.keyframes.end());
    out.ramp_frames = ramp_frames;
    out.total_seconds = total;
    const double n = static_cast<double>(seconds.size());
    out.frame_mean_seconds = std::accumulate(seconds.begin(), seconds.end(), 0.0) / n;
    if (seconds.size() > 1) {
      double ss = 0.0;
      for (double x : seconds) ss += (x - out.frame_mean_seconds) * (x - out.frame_mean_seconds);
      out.frame_std_seconds = std::sqrt(ss / (n - 1.0));
    }
    next.track = std::move(track);
    next.status = ProjectStatus::initialized;
    return out;
  });
}

std::vector<FrameDiagramPoint> ProjectService::diagram(const std::string& id) const {
  auto s = impl_->slot(id);
  std::shared_lock lock(s->mutex);
  const FrameTrack& track = require_track(s->state);
  std::vector<FrameDiagramPoint> points;
  points.reserve(track.frames.size());
  for (int i = 0; i < track.frame_count(); ++i) {
    FrameDiagramPoint p;
    p.frame_index = i;
    const auto& alpha = track.frames[i].alpha_current.values;
    p.mean_alpha = alpha.size() > 0 ? alpha.mean() : 0.0;
    if (track.adjusted.contains(i)) {
      p.kind = PointKind::adjusted;
    } else if (track.keyframes.contains(i)) {
      p.kind = PointKind::keyframe;
    }
    points.push_back(p);
  }
  return points;
}

FrameMesh ProjectService::frame_mesh(const std::string& id, int frame) const {
  auto s = impl_->slot(id);
  std::shared_lock lock(s->mutex);
  const FrameTrack& track = require_track(s->state);
  if (frame < 0 || frame >= track.frame_count()) throw not_found("frame " + std::to_string(frame));
  const TrackFrame& f = track.frames[frame];
  FrameMesh mesh;
  mesh.frame_index = frame;
  mesh.vertices = apply_blendweights(s->rig, f.alpha_current).positions;
  mesh.faces = s->rig.faces;
  mesh.channels = s->rig.channel_names();
  mesh.alpha = f.alpha_current.values;
  mesh.pose = export_pose(f.pose);
  return mesh;
}

PreferenceRecord ProjectService::adjust(const std::string& id, int frame, int target, double value) {
  return impl_->mutate(id, [&](Slot& s, ProjectState& next) {
    FrameTrack& track = require_track(next);
    check_frame(track, frame, "frame");
    if (target < 0 || target >= s.rig.channel_count()) {
      throw ServiceError(400, "out_of_range",
                         "target " + std::to_string(target) + " is not a channel index in [0, " +
                             std::to_string(s.rig.channel_count() - 1) + "]",
                         {"target"});
    }
    if (!std::isfinite(value) || value < 0.0 || value > 1.0) {
      throw ServiceError(400, "out_of_range", "value must lie in the range [0,1]", {"value"});
    }
    record_adjustment(next.ledger, track, frame, target, value);
    return next.ledger.records.back();
  });
}

PreferenceOutcome ProjectService::apply_preference(const std::string& id) {
  return impl_->mutate(id, [&](Slot& s, ProjectState& next) {
    FrameTrack& track = require_track(next);
    PreferenceOutcome out;
    out.delta = compute_preference(next.ledger, s.rig.channel_count());
    out.applied = apply_pending_preference(track, next.ledger);
    return out;
  });
}

std::size_t ProjectService::clear_preference(const std::string& id) {
  return impl_->mutate(id, [&](Slot&, ProjectState& next) {
    const std::size_t n = next.ledger.records.size();
    facerig::clear_preference(next.ledger);
    return n;
  });
}

KeyframeOutcome ProjectService::add_keyframe(const std::string& id, int frame) {
  return impl_->mutate(id, [&](Slot&, ProjectState& next) {
    FrameTrack& track = require_track(next);
    check_frame(track, frame, "frame");
    KeyframeOutcome out;
    out.added = !track.keyframes.contains(frame);
    facerig::add_keyframe(track, frame);
    out.keyframes.assign(track.keyframes.begin(), track.keyframes.end());
    return out;
  });
}

std::string ProjectService::start_finetune(const std::string& id, const FinetuneRequest& request) {
  auto main = impl_->slot(id);
  std::vector<std::string> ids{id};
  for (const auto& extra : request.extra_projects) {
    if (std::find(ids.begin(), ids.end(), extra) == ids.end()) ids.push_back(extra);
  }

  int out_dim = 0;
  {
    std::shared_lock lock(main->mutex);
    out_dim = main->checkpoint.net.config.out_dim;
  }

  // Only frames edited in the current tracks count; ledgers may describe a
  // track that has since been rebuilt.
  std::vector<SamplePair> pairs;
  for (const auto& pid : ids) {
    auto s = impl_->slot(pid);
    std::shared_lock lock(s->mutex);
    if (s->rig.channel_count() != out_dim) {
      throw ServiceError(400, "k_mismatch",
                         "project '" + pid + "' has K=" + std::to_string(s->rig.channel_count()) +
                             " but the checkpoint of '" + id + "' predicts K=" + std::to_string(out_dim),
                         {"projects"});
    }
    if (!s->state.track) continue;
    const PreferenceLedger none;
    const auto part = assemble_finetune_set(std::span(&none, 1), std::span(&*s->state.track, 1));
    pairs.insert(pairs.end(), part.begin(), part.end());
  }
  if (pairs.empty()) {
    throw ServiceError(409, "no_adjustments", "no adjusted frames to finetune on", {"projects"});
  }

  std::unique_lock lock(main->mutex);
  if (main->active_job) {
    throw ServiceError(409, "job_running", "project already has finetune job '" + *main->active_job + "' running");
  }
  std::string job_id;
  {
    std::lock_guard jl(impl_->jobs_mutex);
    job_id = "j" + std::to_string(impl_->next_job++);
    JobInfo info;
    info.id = job_id;
    info.project_id = id;
    info.projects = ids;
    info.pair_count = pairs.size();
    info.epochs = request.options.effective().epochs;
    impl_->jobs[job_id] = info;
    ++impl_->active_jobs;
  }
  main->status_before_job = main->state.status;
  ProjectState next = main->state;
  next.status = ProjectStatus::finetuning;
  try {
    write_state(*main, next);
  } catch (...) {
    impl_->set_job(job_id, [](JobInfo& j) {
      j.state = JobState::failed;
      j.error = "could not persist project state";
    });
    impl_->finish_job();
    throw;
  }
  main->state = std::move(next);
  main->active_job = job_id;

  AdapterNet start = main->checkpoint.net;
  std::lock_guard jl(impl_->jobs_mutex);
  impl_->workers.emplace_back([impl = impl_.get(), job_id, main, start = std::move(start), pairs = std::move(pairs),
                               options = request.options]() mutable {
    impl->run_finetune(job_id, main, std::move(start), std::move(pairs), options);
  });
  return job_id;
}

JobInfo ProjectService::job(const std::string& job_id) const {
  std::lock_guard lock(impl_->jobs_mutex);
  auto it = impl_->jobs.find(job_id);
  if (it == impl_->jobs.end()) throw not_found("job '" + job_id + "'");
  return it->second;
}

void ProjectService::wait_for_jobs() {
  std::unique_lock lock(impl_->jobs_mutex);
  impl_->jobs_cv.wait(lock, [&] { return impl_->active_jobs == 0; });
}

ExportPayload ProjectService::export_project(const std::string& id) const {
  auto s = impl_->slot(id);
  std::shared_lock lock(s->mutex);
  const FrameTrack& track = require_track(s->state);
  ExportPayload out;
  out.body = animation_export_to_json(make_animation_export(track, s->rig, s->fps(), s->state.ledger));
  out.hash = content_hash(out.body);
  return out;
}

}  // namespace facerig
