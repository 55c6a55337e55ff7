#include "vslot/pipeline.hpp"

#include "vslot/archive.hpp"

#include "config_keys.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

namespace vslot {

using nlohmann::json;

// ---------------------------------------------------------------------------
// World.

void WorldConfig::validate() const {
    scene.validate();
    if (feature_dim < 1 || semantic_dim < 2) throw ConfigError("feature and semantic dims must be positive");
    if (!(feature_radius > 0.0) || !(feature_margin >= 0.0)) throw ConfigError("invalid feature radius or margin");
    if (!(semantic_noise >= 0.0)) throw ConfigError("semantic_noise must be >= 0");
    if (!(semantic_norm > 0.0)) throw ConfigError("semantic_norm must be > 0");
    if (std::find(background_names.begin(), background_names.end(), scene.background_class) == background_names.end())
        throw ConfigError("background_class '" + scene.background_class + "' is not among background_names");
}

json to_json(const WorldConfig& c) {
    return {{"num_frames", c.scene.num_frames},
            {"height", c.scene.height},
            {"width", c.scene.width},
            {"patch_size", c.scene.patch_size},
            {"num_objects", c.scene.num_objects},
            {"classes", c.scene.class_catalog},
            {"background_class", c.scene.background_class},
            {"min_extent", c.scene.min_extent},
            {"max_extent", c.scene.max_extent},
            {"max_speed", c.scene.max_speed},
            {"noise_std", c.scene.noise_std},
            {"feature_dim", c.feature_dim},
            {"feature_radius", c.feature_radius},
            {"feature_margin", c.feature_margin},
            {"semantic_dim", c.semantic_dim},
            {"semantic_noise", c.semantic_noise},
            {"semantic_norm", c.semantic_norm},
            {"rotate_patches", c.rotate_patches},
            {"background_names", c.background_names},
            {"seed", c.seed}};
}

using detail::read_key;
using detail::reject_unknown;

WorldConfig world_config_from_json(const json& j) {
    WorldConfig c;
    std::set<std::string> used;
    read_key(j, "num_frames", c.scene.num_frames, used);
    read_key(j, "height", c.scene.height, used);
    read_key(j, "width", c.scene.width, used);
    read_key(j, "patch_size", c.scene.patch_size, used);
    read_key(j, "num_objects", c.scene.num_objects, used);
    read_key(j, "classes", c.scene.class_catalog, used);
    read_key(j, "background_class", c.scene.background_class, used);
    read_key(j, "min_extent", c.scene.min_extent, used);
    read_key(j, "max_extent", c.scene.max_extent, used);
    read_key(j, "max_speed", c.scene.max_speed, used);
    read_key(j, "noise_std", c.scene.noise_std, used);
    read_key(j, "feature_dim", c.feature_dim, used);
    read_key(j, "feature_radius", c.feature_radius, used);
    read_key(j, "feature_margin", c.feature_margin, used);
    read_key(j, "semantic_dim", c.semantic_dim, used);
    read_key(j, "semantic_noise", c.semantic_noise, used);
    read_key(j, "semantic_norm", c.semantic_norm, used);
    read_key(j, "rotate_patches", c.rotate_patches, used);
    read_key(j, "background_names", c.background_names, used);
    read_key(j, "seed", c.seed, used);
    reject_unknown(j, used);
    c.validate();
    return c;
}

World make_world(const WorldConfig& config) {
    config.validate();
    World w;
    w.config = config;
    w.backend = make_feature_backend(static_cast<int>(config.scene.class_catalog.size()), config.feature_dim,
                                     config.feature_radius, config.feature_margin, config.scene.noise_std, config.seed);
    w.teacher = make_semantic_teacher(config.scene.class_catalog, config.background_names, config.semantic_dim,
                                      config.semantic_noise, config.seed, config.semantic_norm);
    w.teacher.rotate_patches = config.rotate_patches;
    return w;
}

Vocabulary world_vocabulary(const World& world, const std::string& prompt_template) {
    const auto& teacher = world.teacher;
    TextEmbedder embed = [&](const std::string& prompt) -> Vector {
        for (std::size_t i = 0; i < teacher.names.size(); ++i)
            if (render_prompt(prompt_template, normalize_class_name(teacher.names[i])) == prompt)
                return teacher.centers.row(static_cast<Eigen::Index>(i)).transpose();
        throw InputError("teacher cannot embed prompt '" + prompt + "'");
    };
    return build_vocabulary(world.config.scene.class_catalog, world.config.background_names, embed, prompt_template);
}

std::uint64_t scene_seed(const World& world, const std::string& split, int index) {
    std::uint64_t salt = 0;
    for (char ch : split) salt = salt * 131 + static_cast<unsigned char>(ch);
    return mix_seed(mix_seed(world.config.seed, salt), static_cast<std::uint64_t>(index));
}

SceneRecord make_scene_record(const World& world, std::uint64_t seed, const std::string& name) {
    SceneConfig sc = world.config.scene;
    sc.seed = seed;
    SceneRecord rec;
    rec.name = name;
    rec.seed = seed;
    rec.scene = generate_scene(sc);
    rec.features = oracle_features(rec.scene.clip, rec.scene.truth, world.backend, mix_seed(seed, 11));
    for (int t = 0; t < sc.num_frames; ++t)
        rec.teacher.push_back(oracle_semantics(rec.scene.truth, t, world.teacher, mix_seed(seed, 12)));
    return rec;
}

namespace {

std::vector<float> matrix_floats(const Matrix& m) {
    std::vector<float> v(static_cast<std::size_t>(m.size()));
    for (Eigen::Index i = 0; i < m.size(); ++i) v[static_cast<std::size_t>(i)] = static_cast<float>(m.data()[i]);
    return v;
}

Matrix floats_matrix(const std::vector<float>& v, Eigen::Index rows, Eigen::Index cols) {
    if (static_cast<std::size_t>(rows * cols) != v.size()) throw FormatError("array size does not match its shape");
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<double>(v[static_cast<std::size_t>(i)]);
    return m;
}

const char* shape_name(SpriteShape s) { return s == SpriteShape::Rectangle ? "rectangle" : "cross"; }
SpriteShape shape_from_name(const std::string& s) {
    if (s == "rectangle") return SpriteShape::Rectangle;
    if (s == "cross") return SpriteShape::Cross;
    throw FormatError("unknown sprite shape '" + s + "'");
}

}  // namespace

void save_scene_archive(const SceneRecord& rec, const fs::path& dir) {
    const auto& gt = rec.scene.truth;
    const auto& clip = rec.scene.clip;
    const GridShape& g = gt.grid;
    Archive ar;
    json objects = json::array();
    for (const auto& o : gt.objects)
        objects.push_back({{"class_id", o.class_id},
                           {"class", gt.class_names[o.class_id]},
                           {"shape", shape_name(o.shape)},
                           {"rows", o.rows},
                           {"cols", o.cols},
                           {"row0", o.row0},
                           {"col0", o.col0},
                           {"vrow", o.vrow},
                           {"vcol", o.vcol}});
    ar.meta() = {{"kind", "scene"},
                 {"version", 1},
                 {"name", rec.name},
                 {"T", clip.frames},
                 {"H", clip.height},
                 {"W", clip.width},
                 {"p", gt.patch_size},
                 {"classes", gt.class_names},
                 {"background_class", gt.background_class},
                 {"seed", rec.seed},
                 {"objects", objects}};
    ar.put_f32("video", {clip.frames, clip.height, clip.width, 3}, clip.pixels);
    std::vector<std::uint8_t> masks(gt.objects.size() * g.size(), 0);
    for (std::size_t j = 0; j < g.size(); ++j)
        if (gt.instance[j] >= 0) masks[static_cast<std::size_t>(gt.instance[j]) * g.size() + j] = 1;
    ar.put_u8("masks", {static_cast<std::int64_t>(gt.objects.size()), g.frames, g.rows, g.cols}, masks);
    ar.put_f32("features", {g.frames, g.rows, g.cols, rec.features.dim()}, matrix_floats(rec.features.features));
    if (!rec.teacher.empty()) {
        const int ds = static_cast<int>(rec.teacher.front().patches.cols());
        Matrix patches(static_cast<Eigen::Index>(g.size()), ds), summary(g.frames, ds);
        const auto fs = static_cast<Eigen::Index>(g.frame_size());
        for (int t = 0; t < g.frames; ++t) {
            patches.middleRows(t * fs, fs) = rec.teacher[static_cast<std::size_t>(t)].patches;
            summary.row(t) = rec.teacher[static_cast<std::size_t>(t)].summary.transpose();
        }
        ar.put_f32("teacher_patches", {g.frames, g.rows, g.cols, ds}, matrix_floats(patches));
        ar.put_f32("teacher_summary", {g.frames, ds}, matrix_floats(summary));
    }
    ar.save(dir);
}

SceneRecord load_scene_archive(const fs::path& dir) {
    const Archive ar = Archive::load(dir);
    const json& m = ar.meta();
    SceneRecord rec;
    try {
        if (m.at("kind").get<std::string>() != "scene") throw FormatError(dir.string() + " is not a scene archive");
        if (m.at("version").get<int>() != 1) throw FormatError("unsupported scene archive version");
        rec.name = m.at("name").get<std::string>();
        rec.seed = m.at("seed").get<std::uint64_t>();
        auto& clip = rec.scene.clip;
        clip.frames = m.at("T").get<int>();
        clip.height = m.at("H").get<int>();
        clip.width = m.at("W").get<int>();
        auto& gt = rec.scene.truth;
        gt.patch_size = m.at("p").get<int>();
        if (gt.patch_size < 1 || clip.height % gt.patch_size || clip.width % gt.patch_size)
            throw FormatError("scene dims are not multiples of the patch size");
        gt.grid = {clip.frames, clip.height / gt.patch_size, clip.width / gt.patch_size};
        gt.class_names = m.at("classes").get<std::vector<std::string>>();
        gt.background_class = m.at("background_class").get<std::string>();
        for (const auto& o : m.at("objects")) {
            SceneObject obj;
            obj.class_id = o.at("class_id").get<int>();
            obj.shape = shape_from_name(o.at("shape").get<std::string>());
            obj.rows = o.at("rows").get<int>();
            obj.cols = o.at("cols").get<int>();
            obj.row0 = o.at("row0").get<double>();
            obj.col0 = o.at("col0").get<double>();
            obj.vrow = o.at("vrow").get<double>();
            obj.vcol = o.at("vcol").get<double>();
            if (obj.class_id < 0 || obj.class_id >= static_cast<int>(gt.class_names.size()))
                throw FormatError("object class id out of range");
            gt.objects.push_back(obj);
        }
    } catch (const json::exception& e) {
        throw FormatError("scene manifest " + dir.string() + ": " + e.what());
    }
    auto& clip = rec.scene.clip;
    auto& gt = rec.scene.truth;
    const GridShape g = gt.grid;
    const auto& video = ar.entry("video");
    if (video.shape != std::vector<std::int64_t>{clip.frames, clip.height, clip.width, 3})
        throw FormatError("video array shape disagrees with the manifest");
    clip.pixels = ar.get_f32("video");

    const auto masks = ar.get_u8("masks");
    if (ar.entry("masks").shape != std::vector<std::int64_t>{static_cast<std::int64_t>(gt.objects.size()), g.frames, g.rows, g.cols})
        throw FormatError("mask array shape disagrees with the manifest");
    gt.instance.assign(g.size(), -1);
    for (std::size_t o = 0; o < gt.objects.size(); ++o)
        for (std::size_t j = 0; j < g.size(); ++j)
            if (masks[o * g.size() + j]) {
                if (gt.instance[j] >= 0) throw FormatError("object masks overlap");
                gt.instance[j] = static_cast<std::int16_t>(o);
            }
    gt.boxes = truth_boxes(gt);

    const auto& fe = ar.entry("features");
    if (fe.shape.size() != 4 || fe.shape[0] != g.frames || fe.shape[1] != g.rows || fe.shape[2] != g.cols)
        throw FormatError("feature array shape disagrees with the manifest");
    rec.features.shape = g;
    rec.features.patch_size = gt.patch_size;
    rec.features.features = floats_matrix(ar.get_f32("features"), static_cast<Eigen::Index>(g.size()), fe.shape[3]);

    if (ar.has("teacher_patches")) {
        const auto& te = ar.entry("teacher_patches");
        if (te.shape.size() != 4 || te.shape[0] != g.frames || te.shape[1] != g.rows || te.shape[2] != g.cols)
            throw FormatError("teacher array shape disagrees with the manifest");
        const Matrix patches = floats_matrix(ar.get_f32("teacher_patches"), static_cast<Eigen::Index>(g.size()), te.shape[3]);
        const Matrix summary = floats_matrix(ar.get_f32("teacher_summary"), g.frames, te.shape[3]);
        const auto fs = static_cast<Eigen::Index>(g.frame_size());
        for (int t = 0; t < g.frames; ++t)
            rec.teacher.push_back({summary.row(t).transpose(), patches.middleRows(t * fs, fs)});
    }
    return rec;
}

std::vector<fs::path> find_scene_archives(const fs::path& path) {
    if (fs::exists(path / "manifest.json")) return {path};
    if (!fs::is_directory(path)) throw ConfigError("scene path " + path.string() + " does not exist");
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(path))
        if (e.is_directory() && fs::exists(e.path() / "manifest.json")) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    if (out.empty()) throw ConfigError("no scene archives under " + path.string());
    return out;
}

void save_vocabulary(const Vocabulary& vocab, const fs::path& dir) {
    Archive ar;
    json entries = json::array();
    for (const auto& e : vocab.entries) entries.push_back({{"name", e.name}, {"kind", label_kind_name(e.kind)}});
    ar.meta() = {{"kind", "vocabulary"}, {"version", 1}, {"prompt_template", vocab.prompt_template}, {"entries", entries}};
    ar.put_matrix("text_features", vocab.text_matrix());
    ar.save(dir);
}

Vocabulary load_vocabulary(const fs::path& dir) {
    const Archive ar = Archive::load(dir);
    const json& m = ar.meta();
    Vocabulary v;
    std::set<std::string> seen;
    try {
        if (m.at("kind").get<std::string>() != "vocabulary") throw FormatError(dir.string() + " is not a vocabulary");
        v.prompt_template = m.at("prompt_template").get<std::string>();
        for (const auto& e : m.at("entries")) {
            VocabEntry entry;
            entry.name = e.at("name").get<std::string>();
            entry.kind = label_kind_from_name(e.at("kind").get<std::string>());
            if (!seen.insert(entry.name).second) throw ConfigError("duplicate vocabulary name '" + entry.name + "'");
            v.entries.push_back(entry);
        }
    } catch (const json::exception& e) {
        throw FormatError("vocabulary manifest " + dir.string() + ": " + e.what());
    }
    const Matrix text = ar.get_matrix("text_features");
    if (text.rows() != static_cast<Eigen::Index>(v.entries.size()))
        throw FormatError("vocabulary text features do not match its entries");
    for (std::size_t i = 0; i < v.entries.size(); ++i) {
        const Vector f = text.row(static_cast<Eigen::Index>(i)).transpose();
        v.entries[i].text_feature = f / f.norm();
    }
    return v;
}

// ---------------------------------------------------------------------------
// SlotPack.

void save_slot_pack(const SlotPack& pack, const fs::path& dir) {
    const GridShape& g = pack.grid();
    Archive ar;
    json labels = json::array();
    for (const auto& r : pack.labels)
        labels.push_back({{"name", r.name},
                          {"label", r.label},
                          {"score", r.score},
                          {"kind", label_kind_name(r.kind)},
                          {"patch_count", r.patch_count},
                          {"empty", r.empty}});
    json kinds = json::array();
    for (auto k : pack.vocab_kinds) kinds.push_back(label_kind_name(k));
    ar.meta() = {{"kind", "slot_pack"},
                 {"version", SlotPack::kVersion},
                 {"stage", pack.stage},
                 {"T", g.frames},
                 {"H", g.rows},
                 {"W", g.cols},
                 {"K", pack.num_slots()},
                 {"p", pack.patch_size},
                 {"semantic_dim", pack.semantic_dim},
                 {"labels", labels},
                 {"vocabulary", pack.vocab_names},
                 {"vocabulary_kinds", kinds},
                 {"foreground", pack.foreground}};
    ar.put_u16("assignment", {g.frames, g.rows, g.cols}, pack.assignment.data());
    ar.put_f32("alpha", {pack.num_slots(), g.frames, g.rows, g.cols}, pack.alpha);
    if (!pack.slot_features.empty())
        ar.put_f32("slot_features", {pack.num_slots(), pack.semantic_dim}, pack.slot_features);
    if (!pack.text_features.empty())
        ar.put_f32("text_features", {static_cast<std::int64_t>(pack.vocab_names.size()), pack.semantic_dim},
                   pack.text_features);
    ar.save(dir);
}

SlotPack load_slot_pack(const fs::path& dir) {
    const Archive ar = Archive::load(dir);
    const json& m = ar.meta();
    SlotPack pack;
    GridShape g;
    int k = 0;
    try {
        if (m.at("kind").get<std::string>() != "slot_pack") throw FormatError(dir.string() + " is not a slot pack");
        const int version = m.at("version").get<int>();
        if (version != SlotPack::kVersion)
            throw FormatError("slot pack version " + std::to_string(version) + " is not supported (expected " +
                              std::to_string(SlotPack::kVersion) + ")");
        pack.stage = m.at("stage").get<std::string>();
        g = {m.at("T").get<int>(), m.at("H").get<int>(), m.at("W").get<int>()};
        k = m.at("K").get<int>();
        pack.patch_size = m.at("p").get<int>();
        pack.semantic_dim = m.at("semantic_dim").get<int>();
        for (const auto& r : m.at("labels")) {
            SlotRecord rec;
            rec.name = r.at("name").get<std::string>();
            rec.label = r.at("label").get<int>();
            rec.score = r.at("score").get<double>();
            rec.kind = label_kind_from_name(r.at("kind").get<std::string>());
            rec.patch_count = r.at("patch_count").get<std::uint64_t>();
            rec.empty = r.at("empty").get<bool>();
            pack.labels.push_back(rec);
        }
        pack.vocab_names = m.at("vocabulary").get<std::vector<std::string>>();
        for (const auto& s : m.at("vocabulary_kinds")) pack.vocab_kinds.push_back(label_kind_from_name(s.get<std::string>()));
        pack.foreground = m.at("foreground").get<std::vector<int>>();
    } catch (const json::exception& e) {
        throw FormatError("slot pack manifest " + dir.string() + ": " + e.what());
    }
    if (g.frames < 1 || g.rows < 1 || g.cols < 1 || k < 1 || k > 65535) throw FormatError("slot pack dims out of range");
    if (!pack.labels.empty() && pack.labels.size() != static_cast<std::size_t>(k))
        throw FormatError("slot pack has " + std::to_string(pack.labels.size()) + " label records for K=" + std::to_string(k));
    if (pack.vocab_kinds.size() != pack.vocab_names.size()) throw FormatError("vocabulary kinds do not match names");

    const auto& ae = ar.entry("assignment");
    if (ae.shape != std::vector<std::int64_t>{g.frames, g.rows, g.cols})
        throw FormatError("assignment payload disagrees with manifest dims");
    pack.assignment = AssignmentMap(g, k);
    pack.assignment.data() = ar.get_u16("assignment");
    for (auto s : pack.assignment.data())
        if (s >= k) throw FormatError("assignment references slot " + std::to_string(s) + " but K=" + std::to_string(k));

    const auto& al = ar.entry("alpha");
    if (al.shape != std::vector<std::int64_t>{k, g.frames, g.rows, g.cols} ||
        al.bytes.size() != static_cast<std::size_t>(k) * g.size() * 4)
        throw FormatError("alpha payload disagrees with manifest dims (K=" + std::to_string(k) + ")");
    pack.alpha = ar.get_f32("alpha");

    if (ar.has("slot_features")) {
        const auto& sf = ar.entry("slot_features");
        if (sf.shape != std::vector<std::int64_t>{k, pack.semantic_dim})
            throw FormatError("slot feature payload disagrees with manifest dims");
        pack.slot_features = ar.get_f32("slot_features");
    }
    if (ar.has("text_features")) {
        const auto& tf = ar.entry("text_features");
        if (tf.shape != std::vector<std::int64_t>{static_cast<std::int64_t>(pack.vocab_names.size()), pack.semantic_dim})
            throw FormatError("text feature payload disagrees with manifest dims");
        pack.text_features = ar.get_f32("text_features");
    }
    return pack;
}

std::vector<float> one_hot_alpha(const AssignmentMap& a) {
    const std::size_t n = a.shape().size();
    std::vector<float> alpha(static_cast<std::size_t>(a.num_slots()) * n, 0.0f);
    for (std::size_t j = 0; j < n; ++j) alpha[a.data()[j] * n + j] = 1.0f;
    return alpha;
}

std::vector<float> alpha_to_floats(const Matrix& alpha) { return matrix_floats(alpha); }

LabeledSlotSet labeled_from_pack(const SlotPack& pack) {
    if (pack.labels.empty()) throw PipelineError("joint-opt stage: pack carries no labels");
    const int k = pack.num_slots();
    LabeledSlotSet out;
    out.names = pack.vocab_names;
    out.kinds = pack.vocab_kinds;
    out.features = floats_matrix(pack.slot_features, k, pack.semantic_dim);
    out.text_features = floats_matrix(pack.text_features, static_cast<Eigen::Index>(pack.vocab_names.size()), pack.semantic_dim);
    out.similarity = cosine_matrix(out.features, out.text_features);
    for (int i = 0; i < k; ++i) {
        const auto& r = pack.labels[static_cast<std::size_t>(i)];
        SlotLabel s;
        s.slot_id = i;
        s.label = r.label;
        s.score = r.score;
        s.kind = r.kind;
        s.patch_count = r.patch_count;
        s.empty = r.empty;
        out.slots.push_back(s);
    }
    return out;
}

void store_labels(SlotPack& pack, const LabeledSlotSet& labeled) {
    pack.labels.clear();
    for (std::size_t i = 0; i < labeled.slots.size(); ++i) {
        const auto& s = labeled.slots[i];
        pack.labels.push_back({labeled.label_name(i), s.label, s.score, s.kind, s.patch_count, s.empty});
    }
    pack.semantic_dim = static_cast<int>(labeled.features.cols());
    pack.slot_features = matrix_floats(labeled.features);
    pack.vocab_names = labeled.names;
    pack.vocab_kinds = labeled.kinds;
    pack.text_features = matrix_floats(labeled.text_features);
}

// ---------------------------------------------------------------------------
// Configuration.

std::string adapter_mode_name(AdapterMode m) { return m == AdapterMode::RawTeacher ? "raw_teacher" : "adapted"; }

AdapterMode adapter_mode_from_name(const std::string& s) {
    if (s == "raw_teacher") return AdapterMode::RawTeacher;
    if (s == "adapted") return AdapterMode::Adapted;
    throw ConfigError("unknown adapter_mode '" + s + "'");
}

std::string extract_mode_name(ExtractMode m) { return m == ExtractMode::Model ? "model" : "oracle_parts"; }

ExtractMode extract_mode_from_name(const std::string& s) {
    if (s == "model") return ExtractMode::Model;
    if (s == "oracle_parts") return ExtractMode::OracleParts;
    throw ConfigError("unknown extract_mode '" + s + "'");
}

void PipelineConfig::validate() const {
    if (num_slots < 1 || num_slots > 65535) throw ConfigError("num_slots must be in [1, 65535]");
    if (patch_size < 1) throw ConfigError("patch_size must be positive");
    if (!std::isfinite(lambda)) throw ConfigError("lambda must be finite");
    if (!(tau1 >= 0.0 && tau1 <= 1.0 && tau2 >= 0.0 && tau2 <= 1.0)) throw ConfigError("tau1/tau2 must lie in [0, 1]");
    connectivity_from_int(connectivity);
    grouping_mode_from_name(grouping_mode);
    extract_mode_from_name(extract_mode);
    adapter_mode_from_name(adapter_mode);
    if (parts_per_object < 1) throw ConfigError("parts_per_object must be positive");
}

json to_json(const PipelineConfig& c) {
    return {{"scenes", c.scenes},
            {"grouping_checkpoint", c.grouping_checkpoint},
            {"adapter_checkpoint", c.adapter_checkpoint},
            {"vocabulary", c.vocabulary},
            {"output_dir", c.output_dir},
            {"num_slots", c.num_slots},
            {"patch_size", c.patch_size},
            {"lambda", c.lambda},
            {"tau1", c.tau1},
            {"tau2", c.tau2},
            {"connectivity", c.connectivity},
            {"grouping_mode", c.grouping_mode},
            {"extract_mode", c.extract_mode},
            {"adapter_mode", c.adapter_mode},
            {"merge_enabled", c.merge_enabled},
            {"parts_per_object", c.parts_per_object},
            {"seed", c.seed}};
}

PipelineConfig pipeline_config_from_json(const json& j) {
    PipelineConfig c;
    std::set<std::string> used;
    read_key(j, "scenes", c.scenes, used);
    read_key(j, "grouping_checkpoint", c.grouping_checkpoint, used);
    read_key(j, "adapter_checkpoint", c.adapter_checkpoint, used);
    read_key(j, "vocabulary", c.vocabulary, used);
    read_key(j, "output_dir", c.output_dir, used);
    read_key(j, "num_slots", c.num_slots, used);
    read_key(j, "patch_size", c.patch_size, used);
    read_key(j, "lambda", c.lambda, used);
    read_key(j, "tau1", c.tau1, used);
    read_key(j, "tau2", c.tau2, used);
    read_key(j, "connectivity", c.connectivity, used);
    read_key(j, "grouping_mode", c.grouping_mode, used);
    read_key(j, "extract_mode", c.extract_mode, used);
    read_key(j, "adapter_mode", c.adapter_mode, used);
    read_key(j, "merge_enabled", c.merge_enabled, used);
    read_key(j, "parts_per_object", c.parts_per_object, used);
    read_key(j, "seed", c.seed, used);
    reject_unknown(j, used);
    c.validate();
    return c;
}

PipelineConfig load_pipeline_config(const fs::path& path) {
    json j;
    try {
        j = json::parse(read_text_file(path));
    } catch (const json::exception& e) {
        throw ConfigError("cannot parse config " + path.string() + ": " + e.what());
    } catch (const FormatError& e) {
        throw ConfigError(e.what());
    }
    return pipeline_config_from_json(j);
}

fs::path resolve_output_dir(const PipelineConfig& c) {
    if (const char* env = std::getenv(kOutputDirEnv); env && *env) return env;
    return c.output_dir;
}

// ---------------------------------------------------------------------------
// Stages.

AssignmentMap oversegmented_assignment(const GroundTruth& gt, int num_slots, int parts, std::uint64_t seed) {
    const int objects = static_cast<int>(gt.objects.size());
    const int needed = objects * parts + 1;
    if (num_slots < needed)
        throw ConfigError("oracle_parts needs at least " + std::to_string(needed) + " slots, have " +
                          std::to_string(num_slots));
    const int background_slots = std::min(2, num_slots - objects * parts);
    std::vector<int> ids(static_cast<std::size_t>(num_slots));
    std::iota(ids.begin(), ids.end(), 0);
    std::mt19937_64 rng(mix_seed(seed, 21));
    std::shuffle(ids.begin(), ids.end(), rng);

    const GridShape& g = gt.grid;
    AssignmentMap a(g, num_slots);
    for (int t = 0; t < g.frames; ++t)
        for (int r = 0; r < g.rows; ++r)
            for (int c = 0; c < g.cols; ++c) {
                const int inst = gt.instance_at(t, r, c);
                int logical;
                if (inst < 0) {
                    logical = objects * parts + (background_slots == 2 && c >= g.cols / 2 ? 1 : 0);
                } else {
                    const auto& obj = gt.objects[static_cast<std::size_t>(inst)];
                    const bool by_rows = obj.rows > obj.cols;
                    const int rel = by_rows ? r - sprite_offset(obj.row0, obj.vrow, t)
                                            : c - sprite_offset(obj.col0, obj.vcol, t);
                    const int extent = by_rows ? obj.rows : obj.cols;
                    const int part = std::clamp(rel * parts / std::max(1, extent), 0, parts - 1);
                    logical = inst * parts + part;
                }
                a.at(t, r, c) = static_cast<std::uint16_t>(ids[static_cast<std::size_t>(logical)]);
            }
    return a;
}

SlotPack extract_stage(const VideoInputs& in, const PipelineConfig& config) {
    if (!in.scene) throw PipelineError("extract stage: no scene");
    const SceneRecord& rec = *in.scene;
    if (rec.features.patch_size != config.patch_size)
        throw PipelineError("extract stage: scene patch size " + std::to_string(rec.features.patch_size) +
                            " differs from configured " + std::to_string(config.patch_size));
    SlotPack pack;
    pack.stage = "extract";
    pack.patch_size = config.patch_size;
    if (extract_mode_from_name(config.extract_mode) == ExtractMode::OracleParts) {
        pack.assignment = oversegmented_assignment(rec.scene.truth, config.num_slots, config.parts_per_object,
                                                   mix_seed(config.seed, rec.seed));
        pack.alpha = one_hot_alpha(pack.assignment);
        return pack;
    }
    if (!in.grouping) throw ConfigError("extract stage: grouping checkpoint is missing");
    const GroupingModel& model = *in.grouping;
    if (model.config().num_slots != config.num_slots)
        throw ConfigError("grouping checkpoint has K=" + std::to_string(model.config().num_slots) +
                          " but the config asks for " + std::to_string(config.num_slots));
    if (grouping_mode_name(model.config().mode) != config.grouping_mode)
        throw ConfigError("grouping checkpoint mode " + grouping_mode_name(model.config().mode) +
                          " differs from configured " + config.grouping_mode);
    if (model.config().feature_dim != rec.features.dim())
        throw PipelineError("extract stage: feature width " + std::to_string(rec.features.dim()) +
                            " does not match the grouping model");
    const SlotSet slots = model.forward(rec.features, mix_seed(config.seed, rec.seed));
    pack.assignment = assign_patches(slots.alpha, rec.features.shape);
    pack.alpha = alpha_to_floats(slots.alpha);
    return pack;
}

SemanticVolume scene_semantics(const SceneRecord& rec, const AdapterModel* adapter) {
    if (rec.teacher.size() != static_cast<std::size_t>(rec.features.shape.frames))
        throw PipelineError("label stage: scene has no teacher tokens for every frame");
    SemanticVolume sem;
    sem.shape = rec.scene.truth.grid;
    const auto fs_ = static_cast<Eigen::Index>(sem.shape.frame_size());
    sem.features.resize(static_cast<Eigen::Index>(sem.shape.size()), rec.teacher.front().patches.cols());
    for (int t = 0; t < sem.shape.frames; ++t) {
        const auto& frame = rec.teacher[static_cast<std::size_t>(t)];
        if (frame.patches.rows() != fs_) throw PipelineError("label stage: teacher grid does not match the scene grid");
        sem.features.middleRows(t * fs_, fs_) = adapter ? encode_semantic(frame, *adapter) : frame.patches;
    }
    return sem;
}

SlotPack label_pack(const SlotPack& extracted, const SemanticVolume& sem, const Vocabulary& vocab, double lambda) {
    const GridShape& g = extracted.grid();
    if (!(sem.shape == g))
        throw PipelineError("label stage: semantic grid " + std::to_string(sem.shape.frames) + "x" +
                            std::to_string(sem.shape.rows) + "x" + std::to_string(sem.shape.cols) +
                            " does not match the slot grid " + std::to_string(g.frames) + "x" +
                            std::to_string(g.rows) + "x" + std::to_string(g.cols));
    if (vocab.entries.empty()) throw ConfigError("label stage: empty vocabulary");
    if (vocab.entries.front().text_feature.size() != sem.features.cols())
        throw PipelineError("label stage: vocabulary width does not match the semantic features");
    const SlotFeatures sf = slot_semantic_features(sem, extracted.assignment);
    const LabeledSlotSet labeled = label_slots(sf, vocab, lambda);
    SlotPack pack = extracted;
    pack.stage = "label";
    store_labels(pack, labeled);
    return pack;
}

SlotPack label_stage(const SlotPack& extracted, const VideoInputs& in, const PipelineConfig& config) {
    if (!in.scene || !in.vocab) throw PipelineError("label stage: scene or vocabulary missing");
    const bool adapted = adapter_mode_from_name(config.adapter_mode) == AdapterMode::Adapted;
    if (adapted && !in.adapter) throw ConfigError("label stage: adapter checkpoint is missing");
    return label_pack(extracted, scene_semantics(*in.scene, adapted ? in.adapter : nullptr), *in.vocab, config.lambda);
}

void save_semantic_volume(const SemanticVolume& sem, const fs::path& dir) {
    const GridShape& g = sem.shape;
    Archive ar;
    ar.meta() = {{"kind", "semantic_volume"}, {"version", 1}, {"T", g.frames}, {"H", g.rows}, {"W", g.cols}};
    ar.put_f32("features", {g.frames, g.rows, g.cols, sem.features.cols()}, matrix_floats(sem.features));
    ar.save(dir);
}

SemanticVolume load_semantic_volume(const fs::path& dir) {
    const Archive ar = Archive::load(dir);
    const json& m = ar.meta();
    SemanticVolume sem;
    try {
        if (m.at("kind").get<std::string>() != "semantic_volume")
            throw FormatError(dir.string() + " is not a semantic volume");
        sem.shape = {m.at("T").get<int>(), m.at("H").get<int>(), m.at("W").get<int>()};
    } catch (const json::exception& e) {
        throw FormatError("semantic volume manifest " + dir.string() + ": " + e.what());
    }
    const auto& e = ar.entry("features");
    if (e.shape.size() != 4 || e.shape[0] != sem.shape.frames || e.shape[1] != sem.shape.rows ||
        e.shape[2] != sem.shape.cols)
        throw FormatError("semantic volume payload disagrees with manifest dims");
    sem.features = floats_matrix(ar.get_f32("features"), static_cast<Eigen::Index>(sem.shape.size()), e.shape[3]);
    return sem;
}

namespace {

std::vector<int> named_targets(const SlotPack& pack) {
    std::vector<int> out;
    for (std::size_t i = 0; i < pack.labels.size(); ++i) {
        const auto& r = pack.labels[i];
        if (!r.empty && r.label != kUnnamed && r.kind == LabelKind::Target) out.push_back(static_cast<int>(i));
    }
    return out;
}

}  // namespace

SlotPack joint_opt_stage(const SlotPack& labeled, const PipelineConfig& config, MergeResult* merge_out) {
    SlotPack out = labeled;
    out.stage = "final";
    const LabeledSlotSet set = labeled_from_pack(labeled);
    if (!config.merge_enabled) {
        out.foreground = named_targets(out);
        if (merge_out) *merge_out = MergeResult{labeled.assignment, set, {}};
        return out;
    }
    MergeResult merged = merge_slots(set, labeled.assignment, connectivity_from_int(config.connectivity));
    out.assignment = merged.assignment;
    const std::size_t n = labeled.grid().size();
    for (const auto& e : merged.log)
        for (std::size_t j = 0; j < n; ++j) {
            out.alpha[static_cast<std::size_t>(e.slot_a) * n + j] += out.alpha[static_cast<std::size_t>(e.slot_b) * n + j];
            out.alpha[static_cast<std::size_t>(e.slot_b) * n + j] = 0.0f;
        }
    store_labels(out, merged.labeled);
    const LabeledSlotSet fg = remove_background(merged);
    out.foreground.clear();
    for (const auto& s : fg.slots) out.foreground.push_back(s.slot_id);
    if (merge_out) *merge_out = std::move(merged);
    return out;
}

StageOutputs run_video(const VideoInputs& in, const PipelineConfig& config) {
    config.validate();
    StageOutputs o;
    o.extracted = extract_stage(in, config);
    o.labeled = label_stage(o.extracted, in, config);
    o.final_pack = joint_opt_stage(o.labeled, config, &o.merge);
    if (config.merge_enabled) {
        o.foreground = remove_background(o.merge);
    } else {
        o.foreground = o.merge.labeled;
    }
    return o;
}

std::vector<SlotPack> run_inference(const PipelineConfig& config) {
    config.validate();
    const fs::path out_dir = resolve_output_dir(config);
    if (config.vocabulary.empty()) throw ConfigError("config names no vocabulary");
    if (config.scenes.empty()) throw ConfigError("config names no scenes");
    std::optional<GroupingModel> grouping;
    std::optional<AdapterModel> adapter;
    if (extract_mode_from_name(config.extract_mode) == ExtractMode::Model) {
        if (config.grouping_checkpoint.empty() || !fs::exists(fs::path(config.grouping_checkpoint) / "manifest.json"))
            throw ConfigError("missing grouping checkpoint '" + config.grouping_checkpoint + "'");
        grouping = load_grouping(config.grouping_checkpoint);
    }
    if (adapter_mode_from_name(config.adapter_mode) == AdapterMode::Adapted) {
        if (config.adapter_checkpoint.empty() || !fs::exists(fs::path(config.adapter_checkpoint) / "manifest.json"))
            throw ConfigError("missing adapter checkpoint '" + config.adapter_checkpoint + "'");
        adapter = load_adapter(config.adapter_checkpoint);
    }
    const Vocabulary vocab = load_vocabulary(config.vocabulary);

    fs::create_directories(out_dir);
    write_text_file(out_dir / "config.json", to_json(config).dump(2) + "\n");
    std::vector<SlotPack> finals;
    for (const auto& path : find_scene_archives(config.scenes)) {
        const SceneRecord rec = load_scene_archive(path);
        VideoInputs in{&rec, grouping ? &*grouping : nullptr, adapter ? &*adapter : nullptr, &vocab};
        const fs::path vdir = out_dir / rec.name;
        const SlotPack extracted = extract_stage(in, config);
        save_slot_pack(extracted, vdir / "extract");
        const SlotPack labeled = label_stage(load_slot_pack(vdir / "extract"), in, config);
        save_slot_pack(labeled, vdir / "label");
        MergeResult merge;
        const SlotPack final_pack = joint_opt_stage(load_slot_pack(vdir / "label"), config, &merge);
        save_slot_pack(final_pack, vdir / "final");
        write_text_file(vdir / "merge_log.json", merge_log_json(merge) + "\n");
        finals.push_back(final_pack);
    }
    return finals;
}

// ---------------------------------------------------------------------------
// Evaluation glue.

FrameBoxes prediction_boxes(const SlotPack& pack, int video) {
    FrameBoxes out(static_cast<std::size_t>(pack.grid().frames));
    for (int s : named_targets(pack)) {
        const auto& rec = pack.labels[static_cast<std::size_t>(s)];
        for (Box b : mask_to_boxes(pack.assignment, s, pack.patch_size)) {
            b.video = video;
            b.label = rec.name;
            b.score = rec.score;
            out[static_cast<std::size_t>(b.frame)].push_back(b);
        }
    }
    return out;
}

FrameBoxes ground_truth_boxes(const GroundTruth& gt, int video) {
    FrameBoxes out = gt.boxes;
    for (auto& frame : out)
        for (auto& b : frame) {
            b.video = video;
            if (b.label) b.label = normalize_class_name(*b.label);
        }
    return out;
}

std::vector<SlotType> pack_slot_types(const SlotPack& pack, const GroundTruth& gt, TaxonomyThresholds th,
                                      const std::vector<int>* slots) {
    std::vector<int> ids;
    if (slots) {
        ids = *slots;
    } else {
        const auto counts = pack.assignment.counts();
        for (int s = 0; s < pack.num_slots(); ++s)
            if (counts[static_cast<std::size_t>(s)] > 0) ids.push_back(s);
    }
    std::vector<SlotType> out;
    for (int s : ids) {
        std::vector<SlotType> per_frame;
        for (const Box& b : mask_to_boxes(pack.assignment, s, pack.patch_size))
            per_frame.push_back(classify_slot(b, gt.boxes[static_cast<std::size_t>(b.frame)], th));
        if (!per_frame.empty()) out.push_back(aggregate_slot_type(per_frame));
    }
    return out;
}

EvalReport evaluate_videos(const std::vector<EvalVideo>& videos, const std::vector<std::string>& known_classes) {
    FrameBoxes pred_frames, gt_frames;
    std::vector<Box> pred_flat, gt_flat;
    std::vector<SlotType> types;
    for (const auto& v : videos) {
        if (v.pred.size() != v.gt.size()) throw InputError("prediction and ground-truth frame counts differ");
        for (std::size_t t = 0; t < v.pred.size(); ++t) {
            pred_frames.push_back(v.pred[t]);
            gt_frames.push_back(v.gt[t]);
            pred_flat.insert(pred_flat.end(), v.pred[t].begin(), v.pred[t].end());
            gt_flat.insert(gt_flat.end(), v.gt[t].begin(), v.gt[t].end());
        }
        types.insert(types.end(), v.types.begin(), v.types.end());
    }
    EvalReport r;
    r.corloc = corloc(pred_frames, gt_frames);
    r.decrate = decrate(pred_frames, gt_frames);
    const ApResult ap = map50(pred_flat, gt_flat, known_classes);
    r.map50 = ap.map;
    r.per_class_ap = ap.per_class;
    r.slot_types = slot_type_stats(types);
    r.num_slots = static_cast<int>(types.size());
    return r;
}

EvalReport evaluate_packs(const std::vector<SlotPack>& packs, const std::vector<SceneRecord>& scenes,
                          TaxonomyThresholds th) {
    if (packs.size() != scenes.size()) throw InputError("evaluate_packs: pack and scene counts differ");
    std::vector<EvalVideo> videos;
    std::set<std::string> known;
    for (std::size_t i = 0; i < packs.size(); ++i) {
        const auto& gt = scenes[i].scene.truth;
        if (!(packs[i].grid() == gt.grid)) throw PipelineError("evaluate: pack grid does not match scene " + scenes[i].name);
        EvalVideo v;
        v.pred = prediction_boxes(packs[i], static_cast<int>(i));
        v.gt = ground_truth_boxes(gt, static_cast<int>(i));
        const std::vector<int> fg = packs[i].stage == "final" ? packs[i].foreground : named_targets(packs[i]);
        v.types = pack_slot_types(packs[i], gt, th, &fg);
        videos.push_back(std::move(v));
        for (std::size_t n = 0; n < packs[i].vocab_names.size(); ++n)
            if (packs[i].vocab_kinds[n] == LabelKind::Target) known.insert(packs[i].vocab_names[n]);
    }
    return evaluate_videos(videos, {known.begin(), known.end()});
}

// ---------------------------------------------------------------------------
// Overlays.

std::array<std::uint8_t, 3> slot_color(int slot) {
    const double h = std::fmod(0.07 + 0.618033988749895 * slot, 1.0) * 6.0;
    const int i = static_cast<int>(h);
    const double f = h - i, v = 0.95, s = 0.75;
    const double p = v * (1 - s), q = v * (1 - s * f), u = v * (1 - s * (1 - f));
    double rgb[3];
    switch (i % 6) {
        case 0: rgb[0] = v, rgb[1] = u, rgb[2] = p; break;
        case 1: rgb[0] = q, rgb[1] = v, rgb[2] = p; break;
        case 2: rgb[0] = p, rgb[1] = v, rgb[2] = u; break;
        case 3: rgb[0] = p, rgb[1] = q, rgb[2] = v; break;
        case 4: rgb[0] = u, rgb[1] = p, rgb[2] = v; break;
        default: rgb[0] = v, rgb[1] = p, rgb[2] = q; break;
    }
    return {static_cast<std::uint8_t>(std::lround(rgb[0] * 255)), static_cast<std::uint8_t>(std::lround(rgb[1] * 255)),
            static_cast<std::uint8_t>(std::lround(rgb[2] * 255))};
}

std::string slot_caption(const SlotPack& pack, int slot) {
    if (pack.labels.empty()) return "slot " + std::to_string(slot);
    const auto& r = pack.labels[static_cast<std::size_t>(slot)];
    if (r.empty) return "";
    if (r.label != kUnnamed) return r.name;
    // Low-similarity slots show their closest name between underscores.
    if (pack.text_features.empty() || pack.slot_features.empty()) return "_unnamed_";
    const LabeledSlotSet set = labeled_from_pack(pack);
    Eigen::Index best = 0;
    set.similarity.row(slot).maxCoeff(&best);
    return "_" + set.names[static_cast<std::size_t>(best)] + "_";
}

void export_overlays(const SlotPack& pack, const VideoClip& clip, const fs::path& dir) {
    const GridShape& g = pack.grid();
    if (clip.frames != g.frames || clip.height != g.rows * pack.patch_size || clip.width != g.cols * pack.patch_size)
        throw InputError("export_overlays: clip does not match the pack grid");
    fs::create_directories(dir);
    constexpr int scale = 4;
    const int h = clip.height * scale, w = clip.width * scale;
    for (int t = 0; t < g.frames; ++t) {
        std::vector<std::uint8_t> img(static_cast<std::size_t>(h) * w * 3);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const int py = y / scale, px = x / scale;
                const int slot = pack.assignment.at(t, py / pack.patch_size, px / pack.patch_size);
                const auto col = slot_color(slot);
                for (int ch = 0; ch < 3; ++ch) {
                    const double base = clip.at(t, py, px, ch) * 255.0;
                    img[(static_cast<std::size_t>(y) * w + x) * 3 + ch] =
                        static_cast<std::uint8_t>(std::lround(0.5 * base + 0.5 * col[ch]));
                }
            }
        json captions = json::array();
        for (int s = 0; s < pack.num_slots(); ++s) {
            const auto boxes = mask_to_boxes(pack.assignment, s, pack.patch_size);
            const auto it = std::find_if(boxes.begin(), boxes.end(), [&](const Box& b) { return b.frame == t; });
            if (it == boxes.end()) continue;
            const auto col = slot_color(s);
            // Box outline in the slot color.
            for (int x = it->x0 * scale; x < it->x1 * scale; ++x)
                for (int y : {it->y0 * scale, it->y1 * scale - 1})
                    for (int ch = 0; ch < 3; ++ch) img[(static_cast<std::size_t>(y) * w + x) * 3 + ch] = col[ch];
            for (int y = it->y0 * scale; y < it->y1 * scale; ++y)
                for (int x : {it->x0 * scale, it->x1 * scale - 1})
                    for (int ch = 0; ch < 3; ++ch) img[(static_cast<std::size_t>(y) * w + x) * 3 + ch] = col[ch];
            captions.push_back({{"slot", s},
                                {"caption", slot_caption(pack, s)},
                                {"color", {col[0], col[1], col[2]}},
                                {"box", {it->x0, it->y0, it->x1, it->y1}}});
        }
        char name[32];
        std::snprintf(name, sizeof name, "frame_%03d", t);
        std::string header = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
        std::vector<std::uint8_t> bytes(header.begin(), header.end());
        bytes.insert(bytes.end(), img.begin(), img.end());
        write_file_bytes(dir / (std::string(name) + ".ppm"), bytes);
        write_text_file(dir / (std::string(name) + ".json"), captions.dump(2) + "\n");
    }
}

}  // namespace vslot
