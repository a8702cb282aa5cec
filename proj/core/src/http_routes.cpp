#include <charconv>
#include <functional>
#include <string>

#include "facerig/service.hpp"
#include "json_codec.hpp"

// After Eigen: <resolv.h> defines a `_res` macro that clashes with Eigen internals.
#include <httplib.h>

namespace facerig {

namespace {

using codec::json;
using httplib::Request;
using httplib::Response;

void send_json(Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(Response& res, int status, const std::string& kind, const std::string& message,
                const std::vector<std::string>& details = {}) {
  send_json(res, status, {{"error", {{"kind", kind}, {"message", message}, {"details", details}}}});
}

using Handler = std::function<void(const Request&, Response&)>;

httplib::Server::Handler guarded(Handler handler) {
  return [handler = std::move(handler)](const Request& req, Response& res) {
    try {
      handler(req, res);
    } catch (const ServiceError& e) {
      send_error(res, e.http_status(), e.kind(), e.what(), e.details());
    } catch (const ContractViolation& e) {
      send_error(res, 400, e.kind(), e.what());
    } catch (const InvalidSize& e) {
      send_error(res, 400, e.kind(), e.what());
    } catch (const Error& e) {
      send_error(res, 422, e.kind(), e.what());
    } catch (const json::exception& e) {
      send_error(res, 400, "invalid_json", e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, "internal", e.what());
    }
  };
}

json body_object(const Request& req) {
  if (req.body.empty()) return json::object();
  json body;
  try {
    body = json::parse(req.body);
  } catch (const json::parse_error& e) {
    throw ServiceError(400, "invalid_json", std::string("request body is not valid JSON: ") + e.what());
  }
  if (!body.is_object()) throw ServiceError(400, "invalid_json", "request body must be a JSON object");
  return body;
}

int int_field(const json& body, const char* name) {
  if (!body.contains(name)) throw ServiceError(400, "missing_field", std::string("missing field '") + name + "'", {name});
  const json& v = body.at(name);
  if (!v.is_number_integer()) {
    throw ServiceError(400, "invalid_field", std::string("field '") + name + "' must be an integer", {name});
  }
  return v.get<int>();
}

double number_field(const json& body, const char* name) {
  if (!body.contains(name)) throw ServiceError(400, "missing_field", std::string("missing field '") + name + "'", {name});
  const json& v = body.at(name);
  if (!v.is_number()) {
    throw ServiceError(400, "invalid_field",
                       std::string("field '") + name + "' must be a number in the range [0,1]", {name});
  }
  return v.get<double>();
}

int parse_int(const std::string& text, const char* name) {
  int value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ServiceError(400, "invalid_argument", std::string("'") + name + "' must be an integer", {name});
  }
  return value;
}

// Each input comes either inline (`rig`) or as a server-side path (`rig_path`).
template <typename T, typename FromJson, typename Load>
std::optional<T> input_field(const json& body, const std::string& name, FromJson from_json, Load load,
                             std::vector<std::string>& problems) {
  try {
    if (body.contains(name)) return from_json(body.at(name));
    if (body.contains(name + "_path")) return load(body.at(name + "_path").template get<std::string>());
    problems.push_back(name + ": missing (give '" + name + "' or '" + name + "_path')");
  } catch (const std::exception& e) {
    problems.push_back(name + ": " + e.what());
  }
  return std::nullopt;
}

json to_json(const ProjectSummary& s) {
  json out = {{"id", s.id},
              {"status", to_string(s.status)},
              {"rig_name", s.rig_name},
              {"channels", s.channels},
              {"fps", s.fps},
              {"landmark_frames", s.landmark_frames},
              {"frame_count", s.frame_count},
              {"keyframes", s.keyframes},
              {"adjusted", s.adjusted},
              {"ledger", {{"records", s.ledger_records}, {"pending", s.ledger_pending}}},
              {"checkpoint_finetuned", s.checkpoint_finetuned},
              {"warnings", s.warnings}};
  out["active_job"] = s.active_job ? json(*s.active_job) : json(nullptr);
  return out;
}

json to_json(const ExportedPose& p) {
  return {{"axis_angle", {p.axis_angle.x(), p.axis_angle.y(), p.axis_angle.z()}},
          {"translation", {p.translation.x(), p.translation.y()}},
          {"scale", p.scale}};
}

json to_json(const JobInfo& j) {
  json out = {{"id", j.id},
              {"project", j.project_id},
              {"projects", j.projects},
              {"state", to_string(j.state)},
              {"pair_count", j.pair_count},
              {"epochs", j.epochs}};
  out["mae_before"] = j.mae_before ? json(*j.mae_before) : json(nullptr);
  out["mae_after"] = j.mae_after ? json(*j.mae_after) : json(nullptr);
  out["error"] = j.error.empty() ? json(nullptr) : json(j.error);
  return out;
}

void register_routes(httplib::Server& server, ProjectService& service) {
  server.Post("/projects", guarded([&](const Request& req, Response& res) {
    const json body = body_object(req);
    std::vector<std::string> problems;
    auto rig = input_field<CharacterRig>(body, "rig", codec::rig_from,
                                         [](const std::string& p) { return load_rig(p); }, problems);
    auto model = input_field<MorphableModel>(body, "model", codec::model_from,
                                             [](const std::string& p) { return load_model(p); }, problems);
    auto checkpoint = input_field<Checkpoint>(body, "checkpoint", codec::checkpoint_from,
                                              [](const std::string& p) { return load_checkpoint(p); }, problems);
    auto landmarks = input_field<LandmarkSequence>(body, "landmarks", codec::landmarks_from,
                                                   [](const std::string& p) { return load_landmarks(p); }, problems);
    if (!problems.empty()) throw ServiceError(400, "invalid_input", "project inputs could not be read", problems);
    const std::string id =
        service.create_project({std::move(*rig), std::move(*model), std::move(*checkpoint), std::move(*landmarks)});
    send_json(res, 201, to_json(service.summary(id)));
  }));

  server.Get("/projects", guarded([&](const Request&, Response& res) {
    send_json(res, 200, {{"projects", service.project_ids()}});
  }));

  server.Get(R"(/projects/([^/]+))", guarded([&](const Request& req, Response& res) {
    send_json(res, 200, to_json(service.summary(req.matches[1])));
  }));

  server.Post(R"(/projects/([^/]+)/initialize)", guarded([&](const Request& req, Response& res) {
    std::optional<int> ramp;
    if (req.has_param("ramp_frames")) ramp = parse_int(req.get_param_value("ramp_frames"), "ramp_frames");
    const InitializeSummary s = service.initialize(req.matches[1], ramp);
    json out = {{"frame_count", s.frame_count},
                {"keyframes", s.keyframes},
                {"timing",
                 {{"total_seconds", s.total_seconds},
                  {"frame_mean_seconds", s.frame_mean_seconds},
                  {"frame_std_seconds", s.frame_std_seconds}}}};
    out["ramp_frames"] = s.ramp_frames ? json(*s.ramp_frames) : json(nullptr);
    send_json(res, 200, out);
  }));

  server.Get(R"(/projects/([^/]+)/diagram)", guarded([&](const Request& req, Response& res) {
    json points = json::array();
    for (const auto& p : service.diagram(req.matches[1])) {
      points.push_back({{"frame_index", p.frame_index}, {"mean_alpha", p.mean_alpha}, {"kind", to_string(p.kind)}});
    }
    send_json(res, 200, {{"points", std::move(points)}});
  }));

  server.Get(R"(/projects/([^/]+)/frames/(-?\d+)/mesh)", guarded([&](const Request& req, Response& res) {
    const FrameMesh m = service.frame_mesh(req.matches[1], parse_int(req.matches[2], "frame"));
    send_json(res, 200,
              {{"frame_index", m.frame_index},
               {"vertex_count", m.vertices.size() / 3},
               {"vertices", codec::to_json(m.vertices)},
               {"faces", m.faces},
               {"channels", m.channels},
               {"alpha", codec::to_json(m.alpha)},
               {"pose", to_json(m.pose)}});
  }));

  server.Post(R"(/projects/([^/]+)/adjust)", guarded([&](const Request& req, Response& res) {
    const json body = body_object(req);
    const int frame = int_field(body, "frame");
    const int target = int_field(body, "target");
    const double value = number_field(body, "value");
    const PreferenceRecord r = service.adjust(req.matches[1], frame, target, value);
    send_json(res, 200,
              {{"frame", r.frame_index},
               {"target", r.channel_index},
               {"previous", r.auto_value},
               {"value", r.adjusted_value},
               {"timestamp", r.timestamp}});
  }));

  server.Post(R"(/projects/([^/]+)/preference/apply)", guarded([&](const Request& req, Response& res) {
    const PreferenceOutcome o = service.apply_preference(req.matches[1]);
    send_json(res, 200, {{"applied", o.applied}, {"delta", codec::to_json(o.delta.delta)}, {"touched", o.delta.touched}});
  }));

  server.Post(R"(/projects/([^/]+)/preference/clear)", guarded([&](const Request& req, Response& res) {
    send_json(res, 200, {{"cleared", service.clear_preference(req.matches[1])}});
  }));

  server.Post(R"(/projects/([^/]+)/keyframes)", guarded([&](const Request& req, Response& res) {
    const json body = body_object(req);
    const KeyframeOutcome o = service.add_keyframe(req.matches[1], int_field(body, "frame"));
    send_json(res, 200, {{"added", o.added}, {"keyframes", o.keyframes}});
  }));

  server.Post(R"(/projects/([^/]+)/finetune)", guarded([&](const Request& req, Response& res) {
    const json body = body_object(req);
    FinetuneRequest request;
    if (body.contains("projects")) request.extra_projects = body.at("projects").get<std::vector<std::string>>();
    if (body.contains("epochs")) request.options.max_epochs = int_field(body, "epochs");
    if (body.contains("learning_rate_factor")) {
      request.options.learning_rate_factor = body.at("learning_rate_factor").get<double>();
    }
    if (body.contains("seed")) request.options.base.seed = body.at("seed").get<std::uint64_t>();
    const std::string job_id = service.start_finetune(req.matches[1], request);
    send_json(res, 202, to_json(service.job(job_id)));
  }));

  server.Get(R"(/jobs/([^/]+))", guarded([&](const Request& req, Response& res) {
    send_json(res, 200, to_json(service.job(req.matches[1])));
  }));

  server.Get(R"(/projects/([^/]+)/export)", guarded([&](const Request& req, Response& res) {
    const std::string id = req.matches[1];
    const ExportPayload p = service.export_project(id);
    const std::string etag = "\"" + p.hash + "\"";
    res.set_header("ETag", etag);
    res.set_header("X-Content-Hash", p.hash);
    if (req.get_header_value("If-None-Match") == etag) {
      res.status = 304;
      return;
    }
    res.set_header("Content-Disposition", "attachment; filename=\"" + id + "_animation.json\"");
    res.status = 200;
    res.set_content(p.body, "application/json");
  }));

  server.set_error_handler([](const Request&, Response& res) {
    if (res.status == 404 && res.body.empty()) send_error(res, 404, "not_found", "no such route");
  });
}

}  // namespace

struct HttpServer::Impl {
  explicit Impl(ProjectService& s) : service(s) { register_routes(server, service); }
  ProjectService& service;
  httplib::Server server;
};

HttpServer::HttpServer(ProjectService& service) : impl_(std::make_unique<Impl>(service)) {}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = impl_->server.bind_to_any_port(host);
    if (bound <= 0) throw IoError("cannot bind " + host);
    return bound;
  }
  if (!impl_->server.bind_to_port(host, port)) throw IoError("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void HttpServer::serve() {
  if (!impl_->server.listen_after_bind()) throw IoError("HTTP server stopped with an error");
}

void HttpServer::stop() {
  if (impl_->server.is_running()) impl_->server.stop();
}

}  // namespace facerig
