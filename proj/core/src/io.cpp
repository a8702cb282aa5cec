#include "facerig/io.hpp"

#include <fstream>
#include <sstream>
#include <system_error>

#include "facerig/errors.hpp"
#include "json_codec.hpp"

namespace facerig {

namespace codec {

namespace {

const json& field(const json& j, const char* name) {
  if (!j.is_object() || !j.contains(name)) throw ContractViolation(std::string("missing field '") + name + "'");
  return j.at(name);
}

template <typename T>
T get(const json& j, const char* name) {
  try {
    return field(j, name).get<T>();
  } catch (const json::exception& e) {
    throw ContractViolation(std::string("field '") + name + "': " + e.what());
  }
}

Eigen::VectorXd vector_value(const json& j, const char* name) {
  if (!j.is_array()) throw ContractViolation(std::string("field '") + name + "' must be an array of numbers");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ContractViolation(std::string("field '") + name + "' must contain only numbers");
    v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  }
  return v;
}

Eigen::MatrixXd rows_value(const json& j, const char* name) {
  if (!j.is_array()) throw ContractViolation(std::string("field '") + name + "' must be an array of rows");
  if (j.empty()) return {};
  const std::size_t cols = j.front().size();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (!j[r].is_array() || j[r].size() != cols) {
      throw ContractViolation(std::string("field '") + name + "' has ragged rows");
    }
    m.row(static_cast<Eigen::Index>(r)) = vector_value(j[r], name).transpose();
  }
  return m;
}

json point_rows(const auto& points) {
  json out = json::array();
  for (Eigen::Index r = 0; r < points.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < points.cols(); ++c) row.push_back(points(r, c));
    out.push_back(std::move(row));
  }
  return out;
}

json pairs_to_json(const std::vector<SamplePair>& pairs) {
  json out = json::array();
  for (const auto& p : pairs) out.push_back(to_json(p));
  return out;
}

std::vector<SamplePair> pairs_from(const json& j, const char* name) {
  if (!j.is_array()) throw ContractViolation(std::string("field '") + name + "' must be an array");
  std::vector<SamplePair> out;
  out.reserve(j.size());
  for (const auto& item : j) {
    SamplePair p;
    p.gamma.values = vector_from(item, "gamma");
    if (p.gamma.values.size() != kExpressionDim) throw ContractViolation("sample gamma must have 64 entries");
    p.alpha.values = vector_from(item, "alpha");
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace

json parse(std::string_view text) {
  try {
    return json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw IoError(std::string("malformed JSON: ") + e.what());
  }
}

json to_json(const Eigen::VectorXd& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

Eigen::VectorXd vector_from(const json& j, const char* name) { return vector_value(field(j, name), name); }

json to_json_rows(const Eigen::MatrixXd& m) { return point_rows(m); }

Eigen::MatrixXd matrix_from_rows(const json& j, const char* name) { return rows_value(field(j, name), name); }

json to_json(const MorphableModel& model) {
  return {{"vertex_count", model.vertex_count()},
          {"mean_shape", to_json(model.mean_shape())},
          {"id_basis", to_json_rows(model.id_basis())},
          {"expr_basis", to_json_rows(model.expr_basis())},
          {"landmark_indices", model.landmark_indices()}};
}

MorphableModel model_from(const json& j) {
  const int v = get<int>(j, "vertex_count");
  Eigen::VectorXd mean = vector_from(j, "mean_shape");
  if (mean.size() != 3 * static_cast<Eigen::Index>(v)) {
    throw ContractViolation("mean_shape length does not equal 3 * vertex_count");
  }
  return MorphableModel::make(std::move(mean), matrix_from_rows(j, "id_basis"), matrix_from_rows(j, "expr_basis"),
                              get<std::vector<int>>(j, "landmark_indices"));
}

json to_json(const CharacterRig& rig) {
  json shapes = json::array();
  for (const auto& b : rig.blendshapes) shapes.push_back({{"name", b.name}, {"delta", to_json(b.delta)}});
  return {{"name", rig.name},
          {"vertex_count", rig.vertex_count()},
          {"base_vertices", to_json(rig.base_vertices)},
          {"faces", rig.faces},
          {"blendshapes", std::move(shapes)},
          {"landmark_map", rig.landmark_map}};
}

CharacterRig rig_from(const json& j) {
  CharacterRig rig;
  rig.name = get<std::string>(j, "name");
  rig.base_vertices = vector_from(j, "base_vertices");
  if (j.contains("vertex_count") && 3 * get<long>(j, "vertex_count") != rig.base_vertices.size()) {
    throw ContractViolation("base_vertices length does not equal 3 * vertex_count");
  }
  if (j.contains("faces")) rig.faces = get<std::vector<std::array<int, 3>>>(j, "faces");
  const json& shapes = field(j, "blendshapes");
  if (!shapes.is_array()) throw ContractViolation("field 'blendshapes' must be an array");
  for (const auto& s : shapes) rig.blendshapes.push_back({get<std::string>(s, "name"), vector_from(s, "delta")});
  rig.landmark_map = get<std::vector<int>>(j, "landmark_map");
  return rig;
}

json to_json(const RuleSet& rules) {
  json groups = json::array();
  for (const auto& g : rules.groups) groups.push_back({{"channels", g.channel_indices}, {"max_sum", g.max_sum}});
  return {{"groups", std::move(groups)}};
}

RuleSet rules_from(const json& j) {
  RuleSet rules;
  if (j.is_null()) return rules;
  const json& groups = field(j, "groups");
  for (const auto& g : groups) {
    rules.groups.push_back({get<std::vector<int>>(g, "channels"), get<double>(g, "max_sum")});
  }
  return rules;
}

json to_json(const SamplePair& pair) { return {{"gamma", to_json(pair.gamma.values)}, {"alpha", to_json(pair.alpha.values)}}; }

json to_json(const GeneratedDataset& ds) {
  return {{"rig_name", ds.rig_name},
          {"seed", ds.seed},
          {"rules", to_json(ds.rules)},
          {"resampled", ds.resampled},
          {"train", pairs_to_json(ds.train)},
          {"val", pairs_to_json(ds.val)},
          {"test", pairs_to_json(ds.test)}};
}

GeneratedDataset dataset_from(const json& j) {
  GeneratedDataset ds;
  ds.rig_name = get<std::string>(j, "rig_name");
  ds.seed = get<std::uint64_t>(j, "seed");
  ds.rules = j.contains("rules") ? rules_from(j.at("rules")) : RuleSet{};
  ds.resampled = j.contains("resampled") ? get<int>(j, "resampled") : 0;
  ds.train = pairs_from(field(j, "train"), "train");
  ds.val = j.contains("val") ? pairs_from(j.at("val"), "val") : std::vector<SamplePair>{};
  ds.test = j.contains("test") ? pairs_from(j.at("test"), "test") : std::vector<SamplePair>{};
  return ds;
}

json to_json(const TrainReport& r) {
  json out = {{"train_mse", r.train_mse}, {"val_mae", r.val_mae}, {"best_epoch", r.best_epoch}, {"seconds", r.seconds}};
  out["test_mae"] = r.test_mae ? json(*r.test_mae) : json(nullptr);
  return out;
}

TrainReport report_from(const json& j) {
  TrainReport r;
  r.train_mse = get<std::vector<double>>(j, "train_mse");
  r.val_mae = get<std::vector<double>>(j, "val_mae");
  r.best_epoch = get<int>(j, "best_epoch");
  r.seconds = get<double>(j, "seconds");
  if (j.contains("test_mae") && !j.at("test_mae").is_null()) r.test_mae = get<double>(j, "test_mae");
  return r;
}

json to_json(const Checkpoint& c) {
  const AdapterConfig& cfg = c.net.config;
  json out = {{"config",
               {{"in_dim", cfg.in_dim},
                {"hidden_dim", cfg.hidden_dim},
                {"out_dim", cfg.out_dim},
                {"activation", to_string(cfg.activation)},
                {"leaky_slope", cfg.leaky_slope},
                {"clamp_output", cfg.clamp_output}}},
              {"w1", to_json_rows(c.net.w1)},
              {"b1", to_json(c.net.b1)},
              {"w2", to_json_rows(c.net.w2)},
              {"b2", to_json(c.net.b2)},
              {"training_seed", c.training_seed}};
  out["report"] = c.report ? to_json(*c.report) : json(nullptr);
  return out;
}

Checkpoint checkpoint_from(const json& j) {
  Checkpoint c;
  const json& cfg = field(j, "config");
  c.net.config.in_dim = get<int>(cfg, "in_dim");
  c.net.config.hidden_dim = get<int>(cfg, "hidden_dim");
  c.net.config.out_dim = get<int>(cfg, "out_dim");
  c.net.config.activation = parse_activation(get<std::string>(cfg, "activation"));
  c.net.config.leaky_slope = get<double>(cfg, "leaky_slope");
  c.net.config.clamp_output = get<bool>(cfg, "clamp_output");
  c.net.w1 = matrix_from_rows(j, "w1");
  c.net.b1 = vector_from(j, "b1");
  c.net.w2 = matrix_from_rows(j, "w2");
  c.net.b2 = vector_from(j, "b2");
  c.net.validate();
  c.training_seed = j.contains("training_seed") ? get<std::uint64_t>(j, "training_seed") : 0;
  if (j.contains("report") && !j.at("report").is_null()) c.report = report_from(j.at("report"));
  return c;
}

json to_json(const LandmarkSequence& seq) {
  json frames = json::array();
  for (const auto& f : seq.frames) frames.push_back(point_rows(f.points));
  json out = {{"convention", seq.convention}, {"frames", std::move(frames)}};
  out["fps"] = seq.fps ? json(*seq.fps) : json(nullptr);
  return out;
}

LandmarkSequence landmarks_from(const json& j) {
  LandmarkSequence seq;
  if (j.contains("convention")) seq.convention = get<std::string>(j, "convention");
  if (seq.convention != "image_y_down" && seq.convention != "y_up") {
    throw ContractViolation("convention must be 'image_y_down' or 'y_up'");
  }
  if (j.contains("fps") && !j.at("fps").is_null()) {
    seq.fps = get<double>(j, "fps");
    if (!(*seq.fps > 0.0)) throw ContractViolation("fps must be positive");
  }
  const json& frames = field(j, "frames");
  if (!frames.is_array()) throw ContractViolation("field 'frames' must be an array");
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const Eigen::MatrixXd pts = rows_value(frames[i], "frames");
    if (pts.rows() != kLandmarkCount || pts.cols() != 2) {
      throw ContractViolation("frame " + std::to_string(i) + " must hold 68 points of 2 coordinates");
    }
    if (!pts.allFinite()) throw ContractViolation("frame " + std::to_string(i) + " has non-finite coordinates");
    LandmarkSet2D f;
    f.points = pts;
    seq.frames.push_back(f);
  }
  return seq;
}

json to_json(const PreferenceLedger& ledger) {
  json records = json::array();
  for (const auto& r : ledger.records) {
    records.push_back({{"frame", r.frame_index},
                       {"channel", r.channel_index},
                       {"auto_value", r.auto_value},
                       {"adjusted_value", r.adjusted_value},
                       {"timestamp", r.timestamp}});
  }
  return {{"records", std::move(records)},
          {"applied_through", ledger.applied_through},
          {"applied", ledger.applied()},
          {"next_timestamp", ledger.next_timestamp}};
}

PreferenceLedger ledger_from(const json& j) {
  PreferenceLedger ledger;
  for (const auto& r : field(j, "records")) {
    ledger.records.push_back({get<int>(r, "frame"), get<int>(r, "channel"), get<double>(r, "auto_value"),
                              get<double>(r, "adjusted_value"), get<std::int64_t>(r, "timestamp")});
  }
  ledger.applied_through = j.contains("applied_through") ? get<std::size_t>(j, "applied_through") : 0;
  if (ledger.applied_through > ledger.records.size()) throw ContractViolation("applied_through exceeds record count");
  ledger.next_timestamp = j.contains("next_timestamp") ? get<std::int64_t>(j, "next_timestamp")
                                                       : static_cast<std::int64_t>(ledger.records.size());
  return ledger;
}

json to_json(const AnimationExport& e) {
  json frames = json::array();
  for (const auto& f : e.frames) frames.push_back(to_json(f));
  json poses = json::array();
  for (const auto& p : e.poses) {
    poses.push_back({{"axis_angle", {p.axis_angle.x(), p.axis_angle.y(), p.axis_angle.z()}},
                     {"translation", {p.translation.x(), p.translation.y()}},
                     {"scale", p.scale}});
  }
  return {{"rig_name", e.rig_name},     {"fps", e.fps},       {"channels", e.channels},
          {"frames", std::move(frames)}, {"poses", std::move(poses)}, {"keyframes", e.keyframes},
          {"adjustments", to_json(e.adjustments)}};
}

AnimationExport animation_export_from(const json& j) {
  AnimationExport e;
  e.rig_name = get<std::string>(j, "rig_name");
  e.fps = get<double>(j, "fps");
  e.channels = get<std::vector<std::string>>(j, "channels");
  for (const auto& f : field(j, "frames")) e.frames.push_back(vector_value(f, "frames"));
  for (const auto& p : field(j, "poses")) {
    ExportedPose pose;
    pose.axis_angle = vector_from(p, "axis_angle");
    pose.translation = vector_from(p, "translation");
    pose.scale = get<double>(p, "scale");
    e.poses.push_back(pose);
  }
  e.keyframes = get<std::vector<int>>(j, "keyframes");
  e.adjustments = j.contains("adjustments") ? ledger_from(j.at("adjustments")) : PreferenceLedger{};
  if (e.poses.size() != e.frames.size()) throw ContractViolation("export has mismatched frame and pose counts");
  return e;
}

json to_json(const Pose& pose) {
  return {{"rotation", to_json_rows(pose.rotation)},
          {"translation", {pose.translation.x(), pose.translation.y()}},
          {"scale", pose.scale}};
}

Pose pose_from(const json& j) {
  Pose p;
  const Eigen::MatrixXd r = matrix_from_rows(j, "rotation");
  if (r.rows() != 3 || r.cols() != 3) throw ContractViolation("pose rotation must be 3x3");
  p.rotation = r;
  p.translation = vector_from(j, "translation");
  p.scale = get<double>(j, "scale");
  return p;
}

json to_json(const FrameTrack& track) {
  json frames = json::array();
  for (const auto& f : track.frames) {
    frames.push_back({{"alpha_auto", to_json(f.alpha_auto.values)},
                      {"alpha_current", to_json(f.alpha_current.values)},
                      {"gamma", to_json(f.gamma.values)},
                      {"has_gamma", f.has_gamma},
                      {"pose", to_json(f.pose)}});
  }
  return {{"frames", std::move(frames)},
          {"keyframes", std::vector<int>(track.keyframes.begin(), track.keyframes.end())},
          {"adjusted", std::vector<int>(track.adjusted.begin(), track.adjusted.end())},
          {"applied_offset", to_json(track.applied_offset)}};
}

FrameTrack track_from(const json& j) {
  FrameTrack t;
  for (const auto& f : field(j, "frames")) {
    TrackFrame frame;
    frame.alpha_auto.values = vector_from(f, "alpha_auto");
    frame.alpha_current.values = vector_from(f, "alpha_current");
    frame.gamma.values = vector_from(f, "gamma");
    frame.has_gamma = get<bool>(f, "has_gamma");
    frame.pose = pose_from(field(f, "pose"));
    t.frames.push_back(std::move(frame));
  }
  for (int k : get<std::vector<int>>(j, "keyframes")) t.keyframes.insert(k);
  for (int a : get<std::vector<int>>(j, "adjusted")) t.adjusted.insert(a);
  t.applied_offset = vector_from(j, "applied_offset");
  return t;
}

}  // namespace codec

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("failed reading '" + path.string() + "'");
  return ss.str();
}

void write_text_file_atomic(const std::filesystem::path& path, std::string_view text) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.flush();
    if (!out) throw IoError("failed writing '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot move '" + tmp.string() + "' to '" + path.string() + "'");
  }
}

namespace {

template <typename T, typename FromJson>
T parse_as(std::string_view text, FromJson from) {
  return from(codec::parse(text));
}

}  // namespace

std::string model_to_json(const MorphableModel& model) { return codec::to_json(model).dump(); }
MorphableModel model_from_json(std::string_view text) { return parse_as<MorphableModel>(text, codec::model_from); }
void save_model(const std::filesystem::path& path, const MorphableModel& model) {
  write_text_file_atomic(path, model_to_json(model));
}
MorphableModel load_model(const std::filesystem::path& path) { return model_from_json(read_text_file(path)); }

std::string rig_to_json(const CharacterRig& rig) { return codec::to_json(rig).dump(); }
CharacterRig rig_from_json(std::string_view text) { return parse_as<CharacterRig>(text, codec::rig_from); }
void save_rig(const std::filesystem::path& path, const CharacterRig& rig) { write_text_file_atomic(path, rig_to_json(rig)); }
CharacterRig load_rig(const std::filesystem::path& path) { return rig_from_json(read_text_file(path)); }

std::string rules_to_json(const RuleSet& rules) { return codec::to_json(rules).dump(2); }
RuleSet rules_from_json(std::string_view text) { return parse_as<RuleSet>(text, codec::rules_from); }

std::string dataset_to_json(const GeneratedDataset& dataset) { return codec::to_json(dataset).dump(); }
GeneratedDataset dataset_from_json(std::string_view text) { return parse_as<GeneratedDataset>(text, codec::dataset_from); }
void save_dataset(const std::filesystem::path& path, const GeneratedDataset& dataset) {
  write_text_file_atomic(path, dataset_to_json(dataset));
}
GeneratedDataset load_dataset(const std::filesystem::path& path) { return dataset_from_json(read_text_file(path)); }

std::string checkpoint_to_json(const Checkpoint& checkpoint) { return codec::to_json(checkpoint).dump(); }
Checkpoint checkpoint_from_json(std::string_view text) { return parse_as<Checkpoint>(text, codec::checkpoint_from); }
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  write_text_file_atomic(path, checkpoint_to_json(checkpoint));
}
Checkpoint load_checkpoint(const std::filesystem::path& path) { return checkpoint_from_json(read_text_file(path)); }

std::string landmarks_to_json(const LandmarkSequence& sequence) { return codec::to_json(sequence).dump(); }
LandmarkSequence landmarks_from_json(std::string_view text) { return parse_as<LandmarkSequence>(text, codec::landmarks_from); }
void save_landmarks(const std::filesystem::path& path, const LandmarkSequence& sequence) {
  write_text_file_atomic(path, landmarks_to_json(sequence));
}
LandmarkSequence load_landmarks(const std::filesystem::path& path) { return landmarks_from_json(read_text_file(path)); }

std::string animation_export_to_json(const AnimationExport& exported) { return codec::to_json(exported).dump(2); }
AnimationExport animation_export_from_json(std::string_view text) {
  return parse_as<AnimationExport>(text, codec::animation_export_from);
}
void save_animation_export(const std::filesystem::path& path, const AnimationExport& exported) {
  write_text_file_atomic(path, animation_export_to_json(exported));
}
AnimationExport load_animation_export(const std::filesystem::path& path) {
  return animation_export_from_json(read_text_file(path));
}

std::string track_to_json(const FrameTrack& track) { return codec::to_json(track).dump(); }
FrameTrack track_from_json(std::string_view text) { return parse_as<FrameTrack>(text, codec::track_from); }

std::string ledger_to_json(const PreferenceLedger& ledger) { return codec::to_json(ledger).dump(); }
PreferenceLedger ledger_from_json(std::string_view text) { return parse_as<PreferenceLedger>(text, codec::ledger_from); }

}  // namespace facerig
