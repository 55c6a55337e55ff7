// vslot: command-line front end for the video slot labeling pipeline.

#include "vslot/archive.hpp"
#include "vslot/pipeline.hpp"
#include "vslot/recipes.hpp"

#include "CLI11.hpp"

#include <iostream>
#include <set>

using namespace vslot;
using nlohmann::json;

namespace {

json read_json_file(const std::string& path) {
    if (path.empty()) return json::object();
    try {
        return json::parse(read_text_file(path));
    } catch (const json::exception& e) {
        throw ConfigError("cannot parse " + path + ": " + e.what());
    } catch (const FormatError& e) {
        throw ConfigError(e.what());
    }
}

void progress(const char* what, int step, double loss, int every = 100) {
    if (step % every == 0) std::cerr << what << " step " << step << " loss " << loss << "\n";
}

int make_scenes(const std::string& config, int count, const std::string& split, const std::string& out,
                const std::string& vocab_out) {
    const World world = make_world(world_config_from_json(read_json_file(config)));
    fs::create_directories(out);
    for (int i = 0; i < count; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "%s_%04d", split.c_str(), i);
        save_scene_archive(make_scene_record(world, scene_seed(world, split, i), name), fs::path(out) / name);
    }
    write_text_file(fs::path(out) / "world.json", to_json(world.config).dump(2) + "\n");
    if (!vocab_out.empty()) save_vocabulary(world_vocabulary(world), vocab_out);
    std::cerr << "wrote " << count << " scenes to " << out << "\n";
    return 0;
}

int train_grouping_cmd(const std::string& config, const std::string& out) {
    const GroupingRecipe recipe = grouping_recipe_from_json(read_json_file(config));
    const GroupingModel model =
        run_grouping_recipe(recipe, [](int step, double loss) { progress("grouping", step, loss); });
    save_grouping(model, out, recipe.model_seed, recipe.train.steps);
    write_text_file(fs::path(out) / "recipe.json", to_json(recipe).dump(2) + "\n");
    return 0;
}

int train_adapter_cmd(const std::string& config, const std::string& out) {
    const AdapterRecipe recipe = adapter_recipe_from_json(read_json_file(config));
    const AdapterModel model =
        run_adapter_recipe(recipe, [](int step, double loss) { progress("adapter", step, loss); });
    save_adapter(model, out, recipe.model_seed, recipe.train.steps);
    write_text_file(fs::path(out) / "recipe.json", to_json(recipe).dump(2) + "\n");
    return 0;
}

int encode_cmd(const std::string& adapter_path, const std::string& in, const std::string& out) {
    const SceneRecord rec = load_scene_archive(in);
    if (adapter_path.empty()) {
        save_semantic_volume(scene_semantics(rec, nullptr), out);
    } else {
        const AdapterModel adapter = load_adapter(adapter_path);
        save_semantic_volume(scene_semantics(rec, &adapter), out);
    }
    return 0;
}

int extract_cmd(const std::string& checkpoint, const std::string& in, const std::string& out, std::uint64_t seed) {
    const SceneRecord rec = load_scene_archive(in);
    const GroupingModel model = load_grouping(checkpoint);
    PipelineConfig cfg;
    cfg.num_slots = model.config().num_slots;
    cfg.patch_size = rec.features.patch_size;
    cfg.grouping_mode = grouping_mode_name(model.config().mode);
    cfg.seed = seed;
    save_slot_pack(extract_stage({&rec, &model, nullptr, nullptr}, cfg), out);
    return 0;
}

int label_cmd(const std::string& semvol, const std::string& slots, const std::string& vocab, double lambda,
              const std::string& out) {
    save_slot_pack(label_pack(load_slot_pack(slots), load_semantic_volume(semvol), load_vocabulary(vocab), lambda),
                   out);
    return 0;
}

int joint_opt_cmd(const std::string& in, const std::string& out, int connectivity, bool no_merge) {
    PipelineConfig cfg;
    cfg.connectivity = connectivity;
    cfg.merge_enabled = !no_merge;
    cfg.validate();
    MergeResult merge;
    const SlotPack pack = joint_opt_stage(load_slot_pack(in), cfg, &merge);
    save_slot_pack(pack, out);
    write_text_file(fs::path(out) / "merge_log.json", merge_log_json(merge) + "\n");
    return 0;
}

int infer_cmd(const std::string& config) {
    const PipelineConfig cfg = load_pipeline_config(config);
    const auto finals = run_inference(cfg);
    std::cerr << "processed " << finals.size() << " scenes into " << resolve_output_dir(cfg).string() << "\n";
    return 0;
}

int evaluate_cmd(const std::string& pred, const std::string& gt, double tau1, double tau2, const std::string& out) {
    std::vector<SlotPack> packs;
    std::vector<SceneRecord> scenes;
    for (const auto& scene_dir : find_scene_archives(gt)) {
        SceneRecord rec = load_scene_archive(scene_dir);
        const fs::path pack_dir = fs::path(pred) / rec.name / "final";
        if (!fs::exists(pack_dir / "manifest.json"))
            throw InputError("no final pack for scene " + rec.name + " under " + pred);
        packs.push_back(load_slot_pack(pack_dir));
        scenes.push_back(std::move(rec));
    }
    const EvalReport report = evaluate_packs(packs, scenes, {tau1, tau2});
    const std::string text = to_json(report);
    if (out.empty())
        std::cout << text << "\n";
    else
        write_text_file(out, text + "\n");
    return 0;
}

int export_cmd(const std::string& pack, const std::string& scene, const std::string& out) {
    export_overlays(load_slot_pack(pack), load_scene_archive(scene).scene.clip, out);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Open-vocabulary video object localization with slots"};
    app.require_subcommand(1);
    std::function<int()> action;

    std::string config, out, split = "test", vocab_out;
    int count = 50;
    auto* mk = app.add_subcommand("make-scenes", "Generate synthetic scene archives");
    mk->add_option("--config", config, "World config (JSON)");
    mk->add_option("--count", count, "Number of scenes")->check(CLI::PositiveNumber);
    mk->add_option("--split", split, "Split name (seeds differ per split)");
    mk->add_option("--out", out, "Output directory")->required();
    mk->add_option("--vocab", vocab_out, "Also write the world vocabulary here");
    mk->callback([&] { action = [&] { return make_scenes(config, count, split, out, vocab_out); }; });

    auto* tg = app.add_subcommand("train-grouping", "Train the slot grouping model");
    tg->add_option("--config", config, "Recipe (JSON)");
    tg->add_option("--out", out, "Checkpoint directory")->required();
    tg->callback([&] { action = [&] { return train_grouping_cmd(config, out); }; });

    auto* ta = app.add_subcommand("train-adapter", "Train the patch adapter");
    ta->add_option("--config", config, "Recipe (JSON)");
    ta->add_option("--out", out, "Checkpoint directory")->required();
    ta->callback([&] { action = [&] { return train_adapter_cmd(config, out); }; });

    std::string adapter, in;
    auto* en = app.add_subcommand("encode", "Compute a scene's semantic volume");
    en->add_option("--adapter", adapter, "Adapter checkpoint (omit for raw teacher tokens)");
    en->add_option("--in", in, "Scene archive")->required();
    en->add_option("--out", out, "Semantic volume directory")->required();
    en->callback([&] { action = [&] { return encode_cmd(adapter, in, out); }; });

    std::string checkpoint;
    std::uint64_t seed = 0;
    auto* ex = app.add_subcommand("extract", "Extract slots from a scene");
    ex->add_option("--checkpoint", checkpoint, "Grouping checkpoint")->required();
    ex->add_option("--in", in, "Scene archive")->required();
    ex->add_option("--out", out, "Slot pack directory")->required();
    ex->add_option("--seed", seed, "Slot initialization seed");
    ex->callback([&] { action = [&] { return extract_cmd(checkpoint, in, out, seed); }; });

    std::string semvol, slots, vocab;
    double lambda = 0.0;
    auto* lb = app.add_subcommand("label", "Name slots against a vocabulary");
    lb->add_option("--semvol", semvol, "Semantic volume")->required();
    lb->add_option("--slots", slots, "Extracted slot pack")->required();
    lb->add_option("--vocab", vocab, "Vocabulary")->required();
    lb->add_option("--lambda", lambda, "Naming threshold");
    lb->add_option("--out", out, "Labeled slot pack")->required();
    lb->callback([&] { action = [&] { return label_cmd(semvol, slots, vocab, lambda, out); }; });

    int connectivity = 4;
    bool no_merge = false;
    auto* jo = app.add_subcommand("joint-opt", "Merge same-named slots and drop background");
    jo->add_option("--in", in, "Labeled slot pack")->required();
    jo->add_option("--out", out, "Final slot pack")->required();
    jo->add_option("--connectivity", connectivity, "4 or 8");
    jo->add_flag("--no-merge", no_merge, "Keep the labeled slots as they are");
    jo->callback([&] { action = [&] { return joint_opt_cmd(in, out, connectivity, no_merge); }; });

    auto* inf = app.add_subcommand("infer", "Run extract, label and joint-opt over scenes");
    inf->add_option("--config", config, "Pipeline config (JSON)")->required();
    inf->callback([&] { action = [&] { return infer_cmd(config); }; });

    std::string pred, gt;
    double tau1 = 0.5, tau2 = 0.5;
    auto* ev = app.add_subcommand("evaluate", "Score final packs against ground truth");
    ev->add_option("--pred", pred, "Inference output directory")->required();
    ev->add_option("--gt", gt, "Scene archive directory")->required();
    ev->add_option("--tau1", tau1, "IoU threshold for SO");
    ev->add_option("--tau2", tau2, "Coverage threshold for PO");
    ev->add_option("--out", out, "Report path (stdout if omitted)");
    ev->callback([&] { action = [&] { return evaluate_cmd(pred, gt, tau1, tau2, out); }; });

    std::string pack, scene;
    auto* xp = app.add_subcommand("export", "Write slot overlays for a pack");
    xp->add_option("--pack", pack, "Slot pack")->required();
    xp->add_option("--scene", scene, "Scene archive")->required();
    xp->add_option("--out", out, "Output directory")->required();
    xp->callback([&] { action = [&] { return export_cmd(pack, scene, out); }; });

    CLI11_PARSE(app, argc, argv);
    try {
        return action();
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return 3;
    } catch (const InputError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return 3;
    } catch (const PipelineError& e) {
        std::cerr << "pipeline error: " << e.what() << "\n";
        return 4;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 5;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
