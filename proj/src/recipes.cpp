#include "vslot/recipes.hpp"

#include "config_keys.hpp"

#include <memory>
#include <random>

namespace vslot {

using nlohmann::json;
using detail::read_key;
using detail::reject_unknown;

namespace {

json to_json(const GroupingConfig& c) {
    return {{"num_slots", c.num_slots},     {"slot_dim", c.slot_dim},     {"feature_dim", c.feature_dim},
            {"iterations", c.iterations},   {"mlp_hidden", c.mlp_hidden}, {"decoder_hidden", c.decoder_hidden},
            {"epsilon", c.epsilon},         {"grouping_mode", grouping_mode_name(c.mode)},
            {"input_positions", c.input_positions}};
}

GroupingConfig grouping_config_from_json(const json& j) {
    GroupingConfig c;
    std::set<std::string> used;
    std::string mode = grouping_mode_name(c.mode);
    read_key(j, "num_slots", c.num_slots, used);
    read_key(j, "slot_dim", c.slot_dim, used);
    read_key(j, "feature_dim", c.feature_dim, used);
    read_key(j, "iterations", c.iterations, used);
    read_key(j, "mlp_hidden", c.mlp_hidden, used);
    read_key(j, "decoder_hidden", c.decoder_hidden, used);
    read_key(j, "epsilon", c.epsilon, used);
    read_key(j, "grouping_mode", mode, used);
    read_key(j, "input_positions", c.input_positions, used);
    reject_unknown(j, used);
    c.mode = grouping_mode_from_name(mode);
    c.validate();
    return c;
}

json to_json(const GroupingTrainConfig& c) {
    return {{"steps", c.steps},
            {"batch_size", c.batch_size},
            {"learning_rate", c.learning_rate},
            {"warmup_steps", c.warmup_steps},
            {"decay_rate", c.decay_rate},
            {"decay_steps", c.decay_steps},
            {"clip_norm", c.clip_norm},
            {"seed", c.seed}};
}

GroupingTrainConfig grouping_train_from_json(const json& j) {
    GroupingTrainConfig c;
    std::set<std::string> used;
    read_key(j, "steps", c.steps, used);
    read_key(j, "batch_size", c.batch_size, used);
    read_key(j, "learning_rate", c.learning_rate, used);
    read_key(j, "warmup_steps", c.warmup_steps, used);
    read_key(j, "decay_rate", c.decay_rate, used);
    read_key(j, "decay_steps", c.decay_steps, used);
    read_key(j, "clip_norm", c.clip_norm, used);
    read_key(j, "seed", c.seed, used);
    reject_unknown(j, used);
    return c;
}

json to_json(const AdapterConfig& c) {
    return {{"dim", c.dim}, {"heads", c.heads}, {"ffn_hidden", c.ffn_hidden}, {"feedforward", c.feedforward}};
}

AdapterConfig adapter_config_from_json(const json& j) {
    AdapterConfig c;
    std::set<std::string> used;
    read_key(j, "dim", c.dim, used);
    read_key(j, "heads", c.heads, used);
    read_key(j, "ffn_hidden", c.ffn_hidden, used);
    read_key(j, "feedforward", c.feedforward, used);
    reject_unknown(j, used);
    c.validate();
    return c;
}

std::string optimizer_name(AdapterOptimizer o) { return o == AdapterOptimizer::Adam ? "adam" : "sgd"; }

json to_json(const AdapterTrainConfig& c) {
    return {{"steps", c.steps},
            {"batch_size", c.batch_size},
            {"optimizer", optimizer_name(c.optimizer)},
            {"learning_rate", c.learning_rate},
            {"clip_norm", c.clip_norm},
            {"seed", c.seed}};
}

AdapterTrainConfig adapter_train_from_json(const json& j) {
    AdapterTrainConfig c;
    std::set<std::string> used;
    std::string opt = optimizer_name(c.optimizer);
    read_key(j, "steps", c.steps, used);
    read_key(j, "batch_size", c.batch_size, used);
    read_key(j, "optimizer", opt, used);
    read_key(j, "learning_rate", c.learning_rate, used);
    read_key(j, "clip_norm", c.clip_norm, used);
    read_key(j, "seed", c.seed, used);
    reject_unknown(j, used);
    if (opt == "adam")
        c.optimizer = AdapterOptimizer::Adam;
    else if (opt == "sgd")
        c.optimizer = AdapterOptimizer::Sgd;
    else
        throw ConfigError("unknown optimizer '" + opt + "'");
    return c;
}

}  // namespace

json to_json(const GroupingRecipe& r) {
    return {{"world", to_json(r.world)},
            {"model", to_json(r.model)},
            {"train", to_json(r.train)},
            {"train_scenes", r.train_scenes},
            {"model_seed", r.model_seed}};
}

json to_json(const AdapterRecipe& r) {
    return {{"world", to_json(r.world)},
            {"model", to_json(r.model)},
            {"train", to_json(r.train)},
            {"frame_objects", r.frame_objects},
            {"empty_frames", r.empty_frames},
            {"model_seed", r.model_seed}};
}

GroupingRecipe grouping_recipe_from_json(const json& j) {
    GroupingRecipe r;
    std::set<std::string> used;
    json world = json::object(), model = json::object(), train = json::object();
    read_key(j, "world", world, used);
    read_key(j, "model", model, used);
    read_key(j, "train", train, used);
    read_key(j, "train_scenes", r.train_scenes, used);
    read_key(j, "model_seed", r.model_seed, used);
    reject_unknown(j, used);
    r.world = world_config_from_json(world);
    if (!model.contains("feature_dim")) model["feature_dim"] = r.world.feature_dim;
    r.model = grouping_config_from_json(model);
    r.train = grouping_train_from_json(train);
    if (r.model.feature_dim != r.world.feature_dim) throw ConfigError("model feature_dim differs from the world's");
    if (r.train_scenes < 1) throw ConfigError("train_scenes must be positive");
    return r;
}

AdapterRecipe adapter_recipe_from_json(const json& j) {
    AdapterRecipe r;
    std::set<std::string> used;
    json world = json::object(), model = json::object(), train = json::object();
    read_key(j, "world", world, used);
    read_key(j, "model", model, used);
    read_key(j, "train", train, used);
    read_key(j, "frame_objects", r.frame_objects, used);
    read_key(j, "empty_frames", r.empty_frames, used);
    read_key(j, "model_seed", r.model_seed, used);
    reject_unknown(j, used);
    r.world = world_config_from_json(world);
    if (!model.contains("dim")) model["dim"] = r.world.semantic_dim;
    r.model = adapter_config_from_json(model);
    r.train = adapter_train_from_json(train);
    if (r.model.dim != r.world.semantic_dim) throw ConfigError("adapter dim differs from the world's semantic_dim");
    if (r.frame_objects < 1) throw ConfigError("frame_objects must be positive");
    if (!(r.empty_frames >= 0.0 && r.empty_frames < 1.0)) throw ConfigError("empty_frames must be in [0, 1)");
    return r;
}

std::vector<FeatureVolume> grouping_training_set(const World& world, int count) {
    std::vector<FeatureVolume> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        SceneConfig sc = world.config.scene;
        sc.seed = scene_seed(world, "train", i);
        const Scene s = generate_scene(sc);
        out.push_back(oracle_features(s.clip, s.truth, world.backend, mix_seed(sc.seed, 11)));
    }
    return out;
}

GroupingModel run_grouping_recipe(const GroupingRecipe& recipe, const StepCallback& on_step) {
    const World world = make_world(recipe.world);
    const auto data = grouping_training_set(world, recipe.train_scenes);
    GroupingModel model(recipe.model, recipe.model_seed);
    train_grouping(data, model, recipe.train, on_step);
    return model;
}

FrameStream adapter_frame_stream(const World& world, int frame_objects, double empty_frames, std::uint64_t seed) {
    auto rng = std::make_shared<std::mt19937_64>(seed);
    SceneConfig sc = world.config.scene;
    sc.num_objects = frame_objects;
    sc.num_frames = 1;
    sc.validate();
    return [rng, sc, frame_objects, empty_frames, &world]() mutable {
        const std::uint64_t draw = (*rng)();
        sc.seed = mix_seed(draw, 0xada);
        sc.num_objects = std::uniform_real_distribution<double>(0.0, 1.0)(*rng) < empty_frames ? 0 : frame_objects;
        const Scene s = generate_scene(sc);
        return oracle_semantics(s.truth, 0, world.teacher, mix_seed(sc.seed, 12));
    };
}

AdapterModel run_adapter_recipe(const AdapterRecipe& recipe, const std::function<void(int, double)>& on_step) {
    const World world = make_world(recipe.world);
    AdapterModel model(recipe.model, recipe.model_seed);
    train_adapter(adapter_frame_stream(world, recipe.frame_objects, recipe.empty_frames, recipe.train.seed), model, recipe.train, on_step);
    return model;
}

}  // namespace vslot
