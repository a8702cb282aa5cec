#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "facerig/adapter.hpp"
#include "facerig/animation.hpp"
#include "facerig/datagen.hpp"
#include "facerig/model.hpp"
#include "facerig/rig.hpp"
#include "facerig/track.hpp"

// JSON persistence for every file the engine reads or writes. Doubles are
// written in shortest round-trip form, so save -> load is bit-exact.
// Parse failures and I/O failures throw IoError; structurally valid files
// with bad contents throw ContractViolation.

namespace facerig {

/// Adapter weights plus the training metadata stored alongside them.
struct Checkpoint {
  AdapterNet net;
  std::uint64_t training_seed = 0;
  std::optional<TrainReport> report;
};

std::string read_text_file(const std::filesystem::path& path);
/// Writes to a sibling temporary file and renames it into place.
void write_text_file_atomic(const std::filesystem::path& path, std::string_view text);

std::string model_to_json(const MorphableModel& model);
MorphableModel model_from_json(std::string_view text);
void save_model(const std::filesystem::path& path, const MorphableModel& model);
MorphableModel load_model(const std::filesystem::path& path);

std::string rig_to_json(const CharacterRig& rig);
/// Parses without validating; run validate_rig on the result.
CharacterRig rig_from_json(std::string_view text);
void save_rig(const std::filesystem::path& path, const CharacterRig& rig);
CharacterRig load_rig(const std::filesystem::path& path);

std::string rules_to_json(const RuleSet& rules);
RuleSet rules_from_json(std::string_view text);

std::string dataset_to_json(const GeneratedDataset& dataset);
GeneratedDataset dataset_from_json(std::string_view text);
void save_dataset(const std::filesystem::path& path, const GeneratedDataset& dataset);
GeneratedDataset load_dataset(const std::filesystem::path& path);

std::string checkpoint_to_json(const Checkpoint& checkpoint);
Checkpoint checkpoint_from_json(std::string_view text);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string landmarks_to_json(const LandmarkSequence& sequence);
LandmarkSequence landmarks_from_json(std::string_view text);
void save_landmarks(const std::filesystem::path& path, const LandmarkSequence& sequence);
LandmarkSequence load_landmarks(const std::filesystem::path& path);

std::string animation_export_to_json(const AnimationExport& exported);
AnimationExport animation_export_from_json(std::string_view text);
void save_animation_export(const std::filesystem::path& path, const AnimationExport& exported);
AnimationExport load_animation_export(const std::filesystem::path& path);

std::string track_to_json(const FrameTrack& track);
FrameTrack track_from_json(std::string_view text);

std::string ledger_to_json(const PreferenceLedger& ledger);
PreferenceLedger ledger_from_json(std::string_view text);

}  // namespace facerig
