#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dietcap/geometry.hpp"
#include "dietcap/lexicon.hpp"
#include "dietcap/model.hpp"
#include "dietcap/trainer.hpp"
#include "dietcap/vocab.hpp"

namespace dietcap {

inline constexpr int kManifestSchemaVersion = 1;
inline constexpr int kReportSchemaVersion = 1;

struct MaskRef {
  int container_id = 0;
  std::string path;
};

// Paths are relative to the episode directory.
struct FrameRecord {
  double timestamp = 0.0;
  std::string image;
  std::string features;
  std::string global;  // precomputed global vector (frozen-global variant), may be empty
  std::string depth;
  std::vector<MaskRef> masks;
  std::vector<std::string> captions;  // ground truth, may be empty
};

struct ContainerTruth {
  int container_id = 0;
  double container_cm3 = 0.0;
  double food_cm3 = 0.0;
};

// manifest.jsonl: line 1 is the episode header
//   {"type":"episode","schema":1,"episode_id":..,"intrinsics":"intrinsics.json","ground_truth":[..]}
// followed by one {"type":"frame",...} record per frame in time order.
struct EpisodeManifest {
  std::string episode_id;
  std::filesystem::path dir;
  std::string intrinsics = "intrinsics.json";
  std::vector<FrameRecord> frames;
  std::vector<ContainerTruth> ground_truth;

  // Validates strictly increasing timestamps and that every referenced file
  // exists. Throws ErrorCode::Data / ErrorCode::Io.
  static EpisodeManifest load(const std::filesystem::path& dir_or_file);
  std::string to_jsonl() const;

  Intrinsics load_intrinsics() const;
  std::optional<ContainerTruth> truth_for(int container_id) const;
};

// Episode directories under `root` (sorted by name), or `root` itself when it
// holds a manifest.
std::vector<std::filesystem::path> find_episodes(const std::filesystem::path& root);

struct EpisodeOptions {
  std::size_t n_pre = 5;
  bool oracle_captions = false;
  std::size_t beam_width = 1;
  VolumeOptions volume;
};

struct FrameResult {
  std::size_t index = 0;
  std::string caption;
  ParsedTerms parsed;
  // Fraction attributed to each container present in the frame; nullopt when
  // the caption gives none.
  std::map<int, std::optional<double>> container_fractions;
};

struct ContainerReport {
  int container_id = 0;
  double v_empty_cm3 = 0.0;
  std::vector<std::size_t> empty_frames;
  std::vector<std::size_t> hull_frames;  // empty frames that passed reconstruction
  std::vector<double> hull_volumes_cm3;
  std::vector<std::size_t> pre_frames;
  std::vector<double> fractions;
  double food_cm3 = 0.0;
  bool short_pre = false;  // fewer than n_pre quantified frames were available
  std::vector<std::string> diagnostics;
};

struct EpisodeReport {
  std::string episode_id;
  std::vector<FrameResult> frames;
  std::vector<ContainerReport> containers;
  std::vector<std::string> notes;
  std::string config_echo;  // JSON

  std::string to_json() const;
};

// Which container a caption's portion applies to: an ordinal match wins; a
// lone container takes unattributed matches; with several containers and no
// ordinals, the frame is empty for all of them only if every quantified
// portion is 0.
std::map<int, std::optional<double>> attribute_fractions(const ParsedTerms& parsed, const std::vector<int>& containers);

// Captions every frame (ground truth in oracle mode, else greedy or beam
// decoding), finds each container's empty frames, reconstructs its volume,
// takes the first n_pre frames with a nonzero quantified portion, and applies
// the food-volume formula. A container without an empty frame raises
// ErrorCode::NoEmpty.
EpisodeReport run_episode(const EpisodeManifest& manifest, const Captioner<float>* model, const Vocabulary* vocab,
                          const Lexicon& lexicon, const EpisodeOptions& options);

// Visual input for one frame, in the form the model's variant needs.
VisualInput load_visual_input(const EpisodeManifest& manifest, const FrameRecord& frame, const ModelConfig& config);

// One sample per frame that has a ground-truth caption (the first one).
std::vector<TrainingSample> training_samples(const EpisodeManifest& manifest, const ModelConfig& config);

struct VolumeErrorRow {
  std::string episode_id;
  int container_id = 0;
  double truth_cm3 = 0.0;
  double estimate_cm3 = 0.0;
  double error_cm3 = 0.0;      // estimate - truth
  double error_std_cm3 = 0.0;  // population std of the per-frame estimates
  double relative = 0.0;       // error / truth
};

struct VolumeEvaluation {
  std::vector<VolumeErrorRow> rows;
  std::vector<std::string> excluded;  // containers with no ground truth
  double overall_abs_mean_cm3 = 0.0;
  double overall_abs_relative = 0.0;
  double max_abs_relative = 0.0;

  std::string table() const;
  std::string to_json() const;
};

using GroundTruthTable = std::map<std::string, std::vector<ContainerTruth>>;  // by episode id

GroundTruthTable ground_truth_table(const std::vector<EpisodeManifest>& manifests);

VolumeEvaluation evaluate_volume(const std::vector<EpisodeReport>& reports, const GroundTruthTable& truth);

}  // namespace dietcap
