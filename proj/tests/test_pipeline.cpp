#include "doctest.h"
#include "golden.hpp"
#include "support.hpp"

#include "vslot/archive.hpp"
#include "vslot/pipeline.hpp"

#include <cstdlib>
#include <cstring>
#include <set>

using namespace vslot;
using namespace vslot::testing;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("vslot_test_" + name);
    fs::remove_all(p);
    return p;
}

WorldConfig small_world(bool rotate) {
    WorldConfig w;
    w.scene.num_frames = 3;
    w.scene.height = w.scene.width = 32;
    w.scene.patch_size = 8;
    w.scene.max_extent = 2;
    w.feature_dim = 8;
    w.semantic_dim = 16;
    w.rotate_patches = rotate;
    return w;
}

bool same_bits(const std::vector<float>& a, const std::vector<float>& b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

// Three scenes, a vocabulary and a config using oracle extraction and raw
// teacher tokens, so no trained model is needed.
struct Workspace {
    World world;
    Vocabulary vocab;
    fs::path root;
    PipelineConfig config;

    Workspace(const std::string& name, bool rotate = false)
        : world(make_world(small_world(rotate))), vocab(world_vocabulary(world)), root(scratch(name)) {
        for (int i = 0; i < 3; ++i) {
            const std::string n = "scene_" + std::to_string(i);
            save_scene_archive(make_scene_record(world, scene_seed(world, "test", i), n), root / "scenes" / n);
        }
        save_vocabulary(vocab, root / "vocab");
        config.scenes = (root / "scenes").string();
        config.vocabulary = (root / "vocab").string();
        config.output_dir = (root / "out").string();
        config.extract_mode = "oracle_parts";
        config.adapter_mode = "raw_teacher";
        config.num_slots = 6;
    }
    ~Workspace() { fs::remove_all(root); }
};

}  // namespace

TEST_CASE("slot pack round trip is bit-identical") {
    const auto dir = scratch("pack_roundtrip");
    const SlotPack pack = golden_pack();
    save_slot_pack(pack, dir / "a");
    const SlotPack back = load_slot_pack(dir / "a");
    CHECK(back == pack);
    CHECK(same_bits(back.alpha, pack.alpha));
    save_slot_pack(back, dir / "b");
    for (const auto& e : fs::directory_iterator(dir / "a"))
        CHECK(read_file_bytes(e.path()) == read_file_bytes(dir / "b" / e.path().filename()));
    fs::remove_all(dir);
}

TEST_CASE("slot pack validation") {
    const auto dir = scratch("pack_validation");
    save_slot_pack(golden_pack(), dir / "pack");
    const auto manifest = dir / "pack" / "manifest.json";
    const std::string original = read_text_file(manifest);

    SUBCASE("manifest K larger than the alpha payload") {
        json m = json::parse(original);
        m["meta"]["K"] = 4;
        write_text_file(manifest, m.dump());
        CHECK_THROWS_AS(load_slot_pack(dir / "pack"), FormatError);
    }
    SUBCASE("version mismatch") {
        json m = json::parse(original);
        m["meta"]["version"] = SlotPack::kVersion + 1;
        write_text_file(manifest, m.dump());
        CHECK_THROWS_AS(load_slot_pack(dir / "pack"), FormatError);
    }
    SUBCASE("truncated payload") {
        auto bytes = read_file_bytes(dir / "pack" / "alpha.f32");
        bytes.pop_back();
        write_file_bytes(dir / "pack" / "alpha.f32", bytes);
        CHECK_THROWS_AS(load_slot_pack(dir / "pack"), FormatError);
    }
    SUBCASE("assignment referencing a missing slot") {
        json m = json::parse(original);
        m["meta"]["K"] = 2;
        write_text_file(manifest, m.dump());
        CHECK_THROWS_AS(load_slot_pack(dir / "pack"), FormatError);
    }
    fs::remove_all(dir);
}

TEST_CASE("committed golden pack decodes to the expected values") {
    const fs::path fixture = fs::path(VSLOT_FIXTURE_DIR) / "golden_pack";
    const SlotPack pack = load_slot_pack(fixture);
    const SlotPack expected = golden_pack();
    CHECK(pack == expected);
    CHECK(same_bits(pack.alpha, expected.alpha));
    CHECK(same_bits(pack.slot_features, expected.slot_features));
    CHECK(pack.assignment.at(1, 0, 1) == 1);
    std::uint32_t third;
    std::memcpy(&third, &pack.alpha[5], 4);
    CHECK(third == 0x3EAAAAABu);
    CHECK(pack.labels[1].name == "UNNAMED");
}

TEST_CASE("pipeline config parsing") {
    const PipelineConfig d = pipeline_config_from_json(json::object());
    CHECK(d.lambda == 0.0);
    CHECK(d.tau1 == 0.5);
    CHECK(d.tau2 == 0.5);
    CHECK(d.merge_enabled);
    CHECK(pipeline_config_from_json(to_json(d)).output_dir == d.output_dir);
    CHECK_THROWS_AS(pipeline_config_from_json(json{{"num_slot", 4}}), ConfigError);
    CHECK_THROWS_AS(pipeline_config_from_json(json{{"adapter_mode", "fancy"}}), ConfigError);
    CHECK_THROWS_AS(pipeline_config_from_json(json{{"connectivity", 6}}), ConfigError);
}

TEST_CASE("output directory override") {
    PipelineConfig c;
    c.output_dir = "configured";
    ::unsetenv(kOutputDirEnv);
    CHECK(resolve_output_dir(c) == fs::path("configured"));
    ::setenv(kOutputDirEnv, "/tmp/elsewhere", 1);
    CHECK(resolve_output_dir(c) == fs::path("/tmp/elsewhere"));
    ::unsetenv(kOutputDirEnv);
}

TEST_CASE("scene archives and vocabularies round-trip") {
    const World world = make_world(small_world(true));
    const SceneRecord rec = make_scene_record(world, 42, "s");
    const auto dir = scratch("scene_roundtrip");
    save_scene_archive(rec, dir / "s");
    const SceneRecord back = load_scene_archive(dir / "s");
    CHECK(back.scene.clip.pixels == rec.scene.clip.pixels);
    CHECK(back.scene.truth.instance == rec.scene.truth.instance);
    CHECK(back.scene.truth.boxes.size() == rec.scene.truth.boxes.size());
    CHECK((back.features.features - rec.features.features).cwiseAbs().maxCoeff() < 1e-6);
    REQUIRE(back.teacher.size() == rec.teacher.size());
    CHECK((back.teacher[1].patches - rec.teacher[1].patches).cwiseAbs().maxCoeff() < 1e-6);

    const Vocabulary v = world_vocabulary(world);
    save_vocabulary(v, dir / "v");
    const Vocabulary vb = load_vocabulary(dir / "v");
    REQUIRE(vb.size() == v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        CHECK(vb.entries[i].name == v.entries[i].name);
        CHECK(vb.entries[i].kind == v.entries[i].kind);
        CHECK((vb.entries[i].text_feature - v.entries[i].text_feature).norm() < 1e-6);
    }
    fs::remove_all(dir);
}

TEST_CASE("oversegmented assignment splits objects into parts") {
    const World world = make_world(small_world(false));
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const SceneRecord rec = make_scene_record(world, seed, "s");
        const auto& gt = rec.scene.truth;
        const AssignmentMap a = oversegmented_assignment(gt, 6, 2, seed);
        // No slot mixes object and background, or two objects.
        std::vector<std::set<int>> owners(6);
        for (std::size_t n = 0; n < gt.instance.size(); ++n) owners[a.data()[n]].insert(gt.instance[n]);
        for (const auto& o : owners) CHECK(o.size() <= 1);
    }
    CHECK_THROWS_AS(oversegmented_assignment(make_scene_record(world, 1, "s").scene.truth, 4, 2, 0), ConfigError);
}

TEST_CASE("inference persists every stage and is deterministic") {
    Workspace ws("infer");
    const auto finals = run_inference(ws.config);
    REQUIRE(finals.size() == 3);
    const fs::path out = ws.config.output_dir;
    CHECK(fs::exists(out / "config.json"));
    for (const char* stage : {"extract", "label", "final"}) CHECK(fs::exists(out / "scene_0" / stage / "manifest.json"));
    CHECK(fs::exists(out / "scene_0" / "merge_log.json"));

    // Stage isolation: joint-opt on the persisted labels reproduces the final pack.
    const SlotPack labeled = load_slot_pack(out / "scene_1" / "label");
    CHECK(joint_opt_stage(labeled, ws.config) == finals[1]);
    CHECK(load_slot_pack(out / "scene_1" / "final") == finals[1]);

    PipelineConfig again = ws.config;
    again.output_dir = (ws.root / "out2").string();
    const auto second = run_inference(again);
    for (std::size_t i = 0; i < finals.size(); ++i) {
        CHECK(second[i] == finals[i]);
        CHECK(same_bits(second[i].alpha, finals[i].alpha));
    }

    std::vector<SceneRecord> scenes;
    for (const auto& p : find_scene_archives(ws.config.scenes)) scenes.push_back(load_scene_archive(p));
    const EvalReport r1 = evaluate_packs(finals, scenes, {});
    const EvalReport r2 = evaluate_packs(second, scenes, {});
    CHECK(to_json(r1) == to_json(r2));
    // Oracle parts with an unrotated teacher name every part correctly.
    CHECK(r1.corloc == 1.0);
}

TEST_CASE("merge_enabled=false passes the labels through") {
    Workspace ws("nomerge");
    ws.config.merge_enabled = false;
    ws.config.output_dir = (ws.root / "nomerge").string();
    run_inference(ws.config);
    const fs::path out = ws.config.output_dir;
    const SlotPack labeled = load_slot_pack(out / "scene_0" / "label");
    const SlotPack final_pack = load_slot_pack(out / "scene_0" / "final");
    CHECK(final_pack.assignment == labeled.assignment);
    CHECK(same_bits(final_pack.alpha, labeled.alpha));
    CHECK(final_pack.labels == labeled.labels);
    CHECK(same_bits(final_pack.slot_features, labeled.slot_features));
}

TEST_CASE("merging fuses the parts of each object") {
    Workspace ws("merge");
    const auto finals = run_inference(ws.config);
    for (const auto& pack : finals) {
        std::set<std::string> names;
        for (int s : pack.foreground) CHECK(names.insert(pack.labels[static_cast<std::size_t>(s)].name).second);
    }
}

TEST_CASE("pipeline errors") {
    Workspace ws("errors");
    SUBCASE("missing grouping checkpoint") {
        ws.config.extract_mode = "model";
        ws.config.grouping_checkpoint = (ws.root / "nowhere").string();
        CHECK_THROWS_AS(run_inference(ws.config), ConfigError);
    }
    SUBCASE("missing adapter checkpoint") {
        ws.config.adapter_mode = "adapted";
        CHECK_THROWS_AS(run_inference(ws.config), ConfigError);
    }
    SUBCASE("grid mismatch names the stage") {
        const SceneRecord rec = load_scene_archive(ws.root / "scenes" / "scene_0");
        SlotPack pack;
        pack.patch_size = 8;
        pack.assignment = AssignmentMap({3, 2, 2}, 2);
        pack.alpha = one_hot_alpha(pack.assignment);
        try {
            label_pack(pack, scene_semantics(rec, nullptr), ws.vocab, 0.0);
            FAIL("expected a pipeline error");
        } catch (const PipelineError& e) {
            CHECK(std::string(e.what()).find("label stage") != std::string::npos);
        }
    }
}

TEST_CASE("overlay export") {
    Workspace ws("export");
    const auto finals = run_inference(ws.config);
    const SceneRecord rec = load_scene_archive(ws.root / "scenes" / "scene_0");
    SlotPack pack = load_slot_pack(fs::path(ws.config.output_dir) / "scene_0" / "label");
    // Force one non-empty slot to be unnamed to check its caption.
    int unnamed = -1;
    for (int s = 0; s < pack.num_slots(); ++s)
        if (!pack.labels[static_cast<std::size_t>(s)].empty) unnamed = s;
    REQUIRE(unnamed >= 0);
    pack.labels[static_cast<std::size_t>(unnamed)].label = kUnnamed;
    pack.labels[static_cast<std::size_t>(unnamed)].name = "UNNAMED";
    const std::string caption = slot_caption(pack, unnamed);
    CHECK(caption.front() == '_');
    CHECK(caption.back() == '_');

    const fs::path dir = ws.root / "overlays";
    export_overlays(pack, rec.scene.clip, dir);
    std::map<int, std::vector<int>> colors;
    for (int t = 0; t < rec.scene.clip.frames; ++t) {
        char name[32];
        std::snprintf(name, sizeof name, "frame_%03d", t);
        CHECK(fs::exists(dir / (std::string(name) + ".ppm")));
        const json caps = json::parse(read_text_file(dir / (std::string(name) + ".json")));
        for (const auto& c : caps) {
            const int slot = c["slot"];
            const auto col = c["color"].get<std::vector<int>>();
            if (colors.count(slot)) CHECK(colors[slot] == col);
            colors[slot] = col;
            if (slot == unnamed) CHECK(c["caption"].get<std::string>().front() == '_');
        }
    }
    std::set<std::vector<int>> distinct;
    for (const auto& [s, c] : colors) distinct.insert(c);
    CHECK(distinct.size() == colors.size());
    CHECK(colors.size() <= static_cast<std::size_t>(pack.num_slots()));

    // A frame with no objects renders only background slots.
    WorldConfig empty = small_world(false);
    empty.scene.num_objects = 0;
    const World w0 = make_world(empty);
    const SceneRecord blank = make_scene_record(w0, 3, "blank");
    SlotPack bg;
    bg.stage = "final";
    bg.patch_size = 8;
    bg.assignment = AssignmentMap(blank.scene.truth.grid, 2, 1);
    bg.alpha = one_hot_alpha(bg.assignment);
    export_overlays(bg, blank.scene.clip, ws.root / "blank");
    const json caps = json::parse(read_text_file(ws.root / "blank" / "frame_000.json"));
    REQUIRE(caps.size() == 1);
    CHECK(caps[0]["slot"] == 1);
}
