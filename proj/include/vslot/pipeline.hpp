#pragma once

#include "vslot/adapter.hpp"
#include "vslot/assignment.hpp"
#include "vslot/evaluation.hpp"
#include "vslot/grouping.hpp"
#include "vslot/joint_opt.hpp"
#include "vslot/labeling.hpp"
#include "vslot/scenes.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace vslot {

namespace fs = std::filesystem;

/// Environment variable that, when set, replaces the configured output dir.
inline constexpr const char* kOutputDirEnv = "VSLOT_OUTPUT_DIR";

// ---------------------------------------------------------------------------
// Synthetic world: scene generator settings plus both oracle backends.

struct WorldConfig {
    SceneConfig scene;
    int feature_dim = 32;
    double feature_radius = 2.0;
    double feature_margin = 1.0;
    int semantic_dim = 32;
    double semantic_noise = 0.05;
    double semantic_norm = 1.0;
    bool rotate_patches = true;
    std::vector<std::string> background_names = {"sky", "grass", "water"};
    std::uint64_t seed = 7;

    void validate() const;
};

nlohmann::json to_json(const WorldConfig& c);
WorldConfig world_config_from_json(const nlohmann::json& j);

struct World {
    WorldConfig config;
    OracleFeatureBackend backend;
    OracleSemanticTeacher teacher;
};

World make_world(const WorldConfig& config);

/// Vocabulary over the world's classes, embedded by the oracle teacher.
Vocabulary world_vocabulary(const World& world, const std::string& prompt_template = kDefaultPromptTemplate);

/// A generated scene with everything the pipeline consumes.
struct SceneRecord {
    std::string name;
    std::uint64_t seed = 0;
    Scene scene;
    FeatureVolume features;
    std::vector<TeacherOutput> teacher;  // one per frame
};

SceneRecord make_scene_record(const World& world, std::uint64_t seed, const std::string& name);
/// Scene seeds for a dataset split; distinct splits never share seeds.
std::uint64_t scene_seed(const World& world, const std::string& split, int index);

void save_scene_archive(const SceneRecord& scene, const fs::path& dir);
SceneRecord load_scene_archive(const fs::path& dir);
/// Scene archives below `path`: the path itself if it holds one, else its
/// immediate subdirectories that do, sorted by name.
std::vector<fs::path> find_scene_archives(const fs::path& path);

void save_semantic_volume(const SemanticVolume& sem, const fs::path& dir);
SemanticVolume load_semantic_volume(const fs::path& dir);

void save_vocabulary(const Vocabulary& vocab, const fs::path& dir);
Vocabulary load_vocabulary(const fs::path& dir);

// ---------------------------------------------------------------------------
// SlotPack: the per-stage serialization unit.

struct SlotRecord {
    std::string name = "UNNAMED";
    int label = kUnnamed;
    double score = 0.0;
    LabelKind kind = LabelKind::None;
    std::uint64_t patch_count = 0;
    bool empty = false;

    bool operator==(const SlotRecord&) const = default;
};

struct SlotPack {
    static constexpr int kVersion = 1;

    std::string stage;  // "extract", "label" or "final"
    int patch_size = 0;
    AssignmentMap assignment;
    std::vector<float> alpha;          // K * N, slot-major
    std::vector<SlotRecord> labels;    // empty before labeling, else one per slot
    std::vector<float> slot_features;  // K * D_sem when labeled
    int semantic_dim = 0;
    std::vector<std::string> vocab_names;
    std::vector<LabelKind> vocab_kinds;
    std::vector<float> text_features;  // N * D_sem when labeled
    std::vector<int> foreground;       // final stage: slots kept after background removal

    const GridShape& grid() const { return assignment.shape(); }
    int num_slots() const { return assignment.num_slots(); }
    bool operator==(const SlotPack&) const = default;
};

void save_slot_pack(const SlotPack& pack, const fs::path& dir);
/// Throws FormatError on version mismatch or payloads that disagree with
/// the manifest dimensions.
SlotPack load_slot_pack(const fs::path& dir);

/// One-hot alpha of an assignment map.
std::vector<float> one_hot_alpha(const AssignmentMap& assignment);
std::vector<float> alpha_to_floats(const Matrix& alpha);

/// Rebuilds the labeled set recorded in a pack (features widened to double).
LabeledSlotSet labeled_from_pack(const SlotPack& pack);
void store_labels(SlotPack& pack, const LabeledSlotSet& labeled);

// ---------------------------------------------------------------------------
// Orchestration.

enum class AdapterMode { RawTeacher, Adapted };
enum class ExtractMode { Model, OracleParts };

std::string adapter_mode_name(AdapterMode m);
AdapterMode adapter_mode_from_name(const std::string& s);
std::string extract_mode_name(ExtractMode m);
ExtractMode extract_mode_from_name(const std::string& s);

struct PipelineConfig {
    std::string scenes;               // scene archive, or a directory of them
    std::string grouping_checkpoint;
    std::string adapter_checkpoint;
    std::string vocabulary;
    std::string output_dir = "vslot_out";
    int num_slots = 5;
    int patch_size = 8;
    double lambda = 0.0;
    double tau1 = 0.5;
    double tau2 = 0.5;
    int connectivity = 4;
    std::string grouping_mode = "spatiotemporal";
    std::string extract_mode = "model";
    std::string adapter_mode = "adapted";
    bool merge_enabled = true;
    int parts_per_object = 2;  // oracle_parts extraction only
    std::uint64_t seed = 0;

    void validate() const;
};

nlohmann::json to_json(const PipelineConfig& c);
/// Unknown keys are a ConfigError; missing keys keep their defaults.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);
PipelineConfig load_pipeline_config(const fs::path& path);
/// Output dir after applying the environment override.
fs::path resolve_output_dir(const PipelineConfig& c);

/// Deliberately over-segmented assignment: each object's mask split into
/// up to `parts` pieces along its longer axis, the background into its own
/// slots. Slots beyond those needed stay empty.
AssignmentMap oversegmented_assignment(const GroundTruth& gt, int num_slots, int parts, std::uint64_t seed);

struct StageOutputs {
    SlotPack extracted;
    SlotPack labeled;
    SlotPack final_pack;
    MergeResult merge;
    LabeledSlotSet foreground;
};

struct VideoInputs {
    const SceneRecord* scene = nullptr;
    const GroupingModel* grouping = nullptr;  // required for ExtractMode::Model
    const AdapterModel* adapter = nullptr;    // required for AdapterMode::Adapted
    const Vocabulary* vocab = nullptr;
};

/// Extract, label and joint-optimize one video in memory.
SlotPack extract_stage(const VideoInputs& in, const PipelineConfig& config);
SlotPack label_stage(const SlotPack& extracted, const VideoInputs& in, const PipelineConfig& config);
/// Labels an extracted pack from an already computed semantic volume.
SlotPack label_pack(const SlotPack& extracted, const SemanticVolume& sem, const Vocabulary& vocab, double lambda);
/// Raw teacher tokens of a scene, or the adapter's readout of them.
SemanticVolume scene_semantics(const SceneRecord& scene, const AdapterModel* adapter);
SlotPack joint_opt_stage(const SlotPack& labeled, const PipelineConfig& config, MergeResult* merge = nullptr);
StageOutputs run_video(const VideoInputs& in, const PipelineConfig& config);

/// Runs the three stages over every configured scene, persisting each
/// stage's pack under <output>/<scene>/{extract,label,final}. Returns the
/// final packs in scene order.
std::vector<SlotPack> run_inference(const PipelineConfig& config);

// ---------------------------------------------------------------------------
// Evaluation glue.

/// Boxes of the named target slots of a pack, labeled with their class and
/// scored by their text similarity.
FrameBoxes prediction_boxes(const SlotPack& pack, int video);
FrameBoxes ground_truth_boxes(const GroundTruth& gt, int video);
/// Per-slot type over the pack's non-empty slots (or only `slots` if given).
std::vector<SlotType> pack_slot_types(const SlotPack& pack, const GroundTruth& gt, TaxonomyThresholds th,
                                      const std::vector<int>* slots = nullptr);

struct EvalVideo {
    FrameBoxes pred;
    FrameBoxes gt;
    std::vector<SlotType> types;
};

EvalReport evaluate_videos(const std::vector<EvalVideo>& videos, const std::vector<std::string>& known_classes);
/// Same, scoring final packs against their scenes.
EvalReport evaluate_packs(const std::vector<SlotPack>& packs, const std::vector<SceneRecord>& scenes,
                          TaxonomyThresholds th);

/// Writes frame_XXX.ppm overlays and frame_XXX.json captions. UNNAMED slots
/// are captioned with underscores.
void export_overlays(const SlotPack& pack, const VideoClip& clip, const fs::path& dir);
/// Fixed palette color for a slot id.
std::array<std::uint8_t, 3> slot_color(int slot);
std::string slot_caption(const SlotPack& pack, int slot);

}  // namespace vslot
