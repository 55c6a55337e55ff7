#pragma once

#include "vslot/common.hpp"
#include "vslot/evaluation.hpp"
#include "vslot/volumes.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace vslot {

/// RGB video, T x H x W x 3, values in [0, 1], row-major.
struct VideoClip {
    int frames = 0;
    int height = 0;
    int width = 0;
    std::vector<float> pixels;

    std::size_t index(int t, int y, int x, int ch) const {
        return ((static_cast<std::size_t>(t) * height + y) * width + x) * 3 + ch;
    }
    float at(int t, int y, int x, int ch) const { return pixels[index(t, y, x, ch)]; }
};

enum class SpriteShape { Rectangle, Cross };

struct SceneConfig {
    int num_frames = 8;
    int height = 64;
    int width = 64;
    int patch_size = 8;
    int num_objects = 2;
    std::vector<std::string> class_catalog = {"bus", "car", "dog", "cat", "horse", "bird"};
    std::string background_class = "sky";
    int min_extent = 2;  // sprite side length in patches
    int max_extent = 3;
    double max_speed = 0.5;  // |velocity component| in patches per frame
    double noise_std = 0.05;
    std::uint64_t seed = 0;

    GridShape grid() const { return {num_frames, height / patch_size, width / patch_size}; }
    void validate() const;
};

struct SceneObject {
    int class_id = 0;  // index into class_catalog
    SpriteShape shape = SpriteShape::Rectangle;
    int rows = 0, cols = 0;         // extent in patches
    double row0 = 0.0, col0 = 0.0;  // frame-0 top-left, patches
    double vrow = 0.0, vcol = 0.0;  // patches per frame
};

struct GroundTruth {
    GridShape grid;
    int patch_size = 0;
    std::vector<SceneObject> objects;
    std::vector<std::int16_t> instance;  // per patch: object index or -1 for background
    FrameBoxes boxes;                    // per frame, one box per visible object (slot = object index)
    std::vector<std::string> class_names;
    std::string background_class;

    int instance_at(int t, int r, int c) const { return instance[grid.index(t, r, c)]; }
    /// Class name of each patch (background class where no object).
    std::vector<int> patch_classes() const;  // -1 = background, else class id
    bool mask(int object, int t, int r, int c) const { return instance_at(t, r, c) == object; }
};

/// Integer top-left patch offset of a sprite at frame t.
int sprite_offset(double start, double velocity, int t);

/// Patch offsets (dr, dc) covered by a sprite relative to its top-left corner.
std::vector<std::pair<int, int>> sprite_cells(const SceneObject& obj);

struct Scene {
    VideoClip clip;
    GroundTruth truth;
};

Scene generate_scene(const SceneConfig& config);

/// Tight pixel box of every visible object in every frame.
FrameBoxes truth_boxes(const GroundTruth& gt);

/// Stand-in for a frozen video backbone: class centers in feature space.
struct OracleFeatureBackend {
    Matrix class_centers;  // C x D, row c = center of catalog class c
    Vector background_center;
    double noise_std = 0.05;
    double margin = 0.0;

    int dim() const { return static_cast<int>(class_centers.cols()); }
};

/// Draws centers with norm `radius` until every pair (background included)
/// is at least `margin` apart.
OracleFeatureBackend make_feature_backend(int num_classes, int dim, double radius, double margin,
                                          double noise_std, std::uint64_t seed);

FeatureVolume oracle_features(const VideoClip& clip, const GroundTruth& gt, const OracleFeatureBackend& backend,
                              std::uint64_t noise_seed);

/// Stand-in for a frozen vision-language encoder. Patch tokens leave the
/// penultimate layer rotated by a fixed orthogonal map, so that they do not
/// line up with the text table until an adapter learns to read them out.
struct OracleSemanticTeacher {
    std::vector<std::string> names;  // catalog classes followed by background classes
    Matrix centers;                  // names.size() x D_sem, unit norm; doubles as the text table
    Matrix rotation;                 // D_sem x D_sem orthogonal
    double noise_std = 0.05;
    bool rotate_patches = true;

    int dim() const { return static_cast<int>(centers.cols()); }
    int index_of(const std::string& name) const;
    /// Text embedding of a rendered prompt; the class is recovered by
    /// matching the prompt against the template rendered for each name.
    Vector embed_text(const std::string& prompt, const std::string& prompt_template) const;
};

/// Builds a teacher whose rotation maps no class token closer to its own
/// text feature than to some other class (resampled deterministically).
/// Centers are random directions scaled to `center_norm`.
OracleSemanticTeacher make_semantic_teacher(const std::vector<std::string>& class_names,
                                            const std::vector<std::string>& background_names, int dim,
                                            double noise_std, std::uint64_t seed, double center_norm = 1.0);

struct TeacherOutput {
    Vector summary;  // D_sem
    Matrix patches;  // M x D_sem, M = H' * W'
};

/// Teacher tokens for one frame. The summary token sits on the class center
/// of the largest visible object (background class when none is visible).
TeacherOutput oracle_semantics(const GroundTruth& gt, int frame, const OracleSemanticTeacher& teacher,
                               std::uint64_t noise_seed);

/// Fraction of object patches whose nearest text feature (cosine) is the
/// patch's ground-truth class.
double patch_retrieval_accuracy(const Matrix& patch_tokens, const GroundTruth& gt, int frame,
                                const OracleSemanticTeacher& teacher, bool objects_only = true);

/// Deterministic 64-bit mix for deriving sub-seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

}  // namespace vslot
