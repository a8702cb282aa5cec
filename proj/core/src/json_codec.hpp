#pragma once

// Private nlohmann::json conversions shared by io.cpp and the service layer.

#include <json.hpp>

#include "facerig/io.hpp"

namespace facerig::codec {

using nlohmann::json;

json to_json(const Eigen::VectorXd& v);
Eigen::VectorXd vector_from(const json& j, const char* field);
json to_json_rows(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_rows(const json& j, const char* field);

json to_json(const MorphableModel& model);
MorphableModel model_from(const json& j);
json to_json(const CharacterRig& rig);
CharacterRig rig_from(const json& j);
json to_json(const RuleSet& rules);
RuleSet rules_from(const json& j);
json to_json(const SamplePair& pair);
json to_json(const GeneratedDataset& dataset);
GeneratedDataset dataset_from(const json& j);
json to_json(const TrainReport& report);
TrainReport report_from(const json& j);
json to_json(const Checkpoint& checkpoint);
Checkpoint checkpoint_from(const json& j);
json to_json(const LandmarkSequence& seq);
LandmarkSequence landmarks_from(const json& j);
json to_json(const PreferenceLedger& ledger);
PreferenceLedger ledger_from(const json& j);
json to_json(const AnimationExport& exported);
AnimationExport animation_export_from(const json& j);
json to_json(const Pose& pose);
Pose pose_from(const json& j);
json to_json(const FrameTrack& track);
FrameTrack track_from(const json& j);

/// Parses text, mapping parse errors to IoError.
json parse(std::string_view text);

}  // namespace facerig::codec
