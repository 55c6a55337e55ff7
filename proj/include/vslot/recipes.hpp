#pragma once

#include "vslot/adapter.hpp"
#include "vslot/grouping.hpp"
#include "vslot/pipeline.hpp"

#include "json.hpp"

#include <functional>

namespace vslot {

// Training recipes as read from the train-* config files. Each is a JSON
// object with optional "world", "model" and "train" sections plus a few
// top-level keys; missing keys keep the defaults below.

struct GroupingRecipe {
    WorldConfig world;
    GroupingConfig model;
    GroupingTrainConfig train;
    int train_scenes = 64;
    std::uint64_t model_seed = 1;
};

struct AdapterRecipe {
    WorldConfig world;
    AdapterConfig model;
    AdapterTrainConfig train;
    int frame_objects = 2;        // objects per unlabeled training image
    double empty_frames = 0.0;    // share of training images with background only
    std::uint64_t model_seed = 2;
};

nlohmann::json to_json(const GroupingRecipe& r);
nlohmann::json to_json(const AdapterRecipe& r);
GroupingRecipe grouping_recipe_from_json(const nlohmann::json& j);
AdapterRecipe adapter_recipe_from_json(const nlohmann::json& j);

/// Feature volumes of the recipe's training split.
std::vector<FeatureVolume> grouping_training_set(const World& world, int count);

GroupingModel run_grouping_recipe(const GroupingRecipe& recipe, const StepCallback& on_step = {});

/// Endless stream of unlabeled frames drawn from fresh scenes of the world;
/// a share `empty_frames` of them show background only.
FrameStream adapter_frame_stream(const World& world, int frame_objects, double empty_frames, std::uint64_t seed);

AdapterModel run_adapter_recipe(const AdapterRecipe& recipe, const std::function<void(int, double)>& on_step = {});

}  // namespace vslot
