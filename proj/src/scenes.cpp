#include "vslot/scenes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace vslot {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    // splitmix64 finalizer
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

void SceneConfig::validate() const {
    if (num_frames < 1) throw ConfigError("num_frames must be >= 1");
    if (patch_size < 1) throw ConfigError("patch_size must be >= 1");
    if (height < 1 || width < 1) throw ConfigError("frame size must be positive");
    if (height % patch_size != 0 || width % patch_size != 0)
        throw ConfigError("height and width must be multiples of patch_size");
    if (num_objects < 0) throw ConfigError("num_objects must be >= 0");
    if (num_objects > static_cast<int>(class_catalog.size()))
        throw ConfigError("num_objects exceeds the class catalog (classes are distinct per scene)");
    if (!(noise_std >= 0.0)) throw ConfigError("noise_std must be >= 0");
    if (min_extent < 1 || max_extent < min_extent) throw ConfigError("invalid sprite extent range");
    if (max_extent > height / patch_size || max_extent > width / patch_size)
        throw ConfigError("sprite extent exceeds the patch grid");
    if (!(max_speed >= 0.0)) throw ConfigError("max_speed must be >= 0");
}

int sprite_offset(double start, double velocity, int t) {
    return static_cast<int>(std::floor(start + velocity * t + 0.5));
}

std::vector<std::pair<int, int>> sprite_cells(const SceneObject& obj) {
    std::vector<std::pair<int, int>> cells;
    if (obj.shape == SpriteShape::Rectangle) {
        for (int r = 0; r < obj.rows; ++r)
            for (int c = 0; c < obj.cols; ++c) cells.emplace_back(r, c);
    } else {
        const int mr = obj.rows / 2, mc = obj.cols / 2;
        for (int r = 0; r < obj.rows; ++r)
            for (int c = 0; c < obj.cols; ++c)
                if (r == mr || c == mc) cells.emplace_back(r, c);
    }
    return cells;
}

std::vector<int> GroundTruth::patch_classes() const {
    std::vector<int> out(instance.size(), -1);
    for (std::size_t j = 0; j < instance.size(); ++j)
        if (instance[j] >= 0) out[j] = objects[instance[j]].class_id;
    return out;
}

namespace {

std::array<float, 3> class_color(int class_id) {
    // Spread hues; background uses class_id = -1.
    if (class_id < 0) return {0.55f, 0.75f, 0.95f};
    const float h = std::fmod(0.13f + 0.618034f * static_cast<float>(class_id), 1.0f);
    const float s = 0.8f, v = 0.9f;
    const float hh = h * 6.0f;
    const int i = static_cast<int>(hh);
    const float f = hh - static_cast<float>(i);
    const float p = v * (1 - s), q = v * (1 - s * f), u = v * (1 - s * (1 - f));
    switch (i % 6) {
        case 0: return {v, u, p};
        case 1: return {q, v, p};
        case 2: return {p, v, u};
        case 3: return {p, q, v};
        case 4: return {u, p, v};
        default: return {v, p, q};
    }
}

}  // namespace

FrameBoxes truth_boxes(const GroundTruth& gt) {
    const GridShape& grid = gt.grid;
    FrameBoxes boxes(static_cast<std::size_t>(grid.frames));
    for (int t = 0; t < grid.frames; ++t) {
        for (int o = 0; o < static_cast<int>(gt.objects.size()); ++o) {
            int r0 = grid.rows, r1 = -1, c0 = grid.cols, c1 = -1;
            for (int r = 0; r < grid.rows; ++r)
                for (int c = 0; c < grid.cols; ++c)
                    if (gt.instance_at(t, r, c) == o) {
                        r0 = std::min(r0, r);
                        r1 = std::max(r1, r);
                        c0 = std::min(c0, c);
                        c1 = std::max(c1, c);
                    }
            if (r1 < 0) continue;
            Box b;
            b.x0 = c0 * gt.patch_size;
            b.y0 = r0 * gt.patch_size;
            b.x1 = (c1 + 1) * gt.patch_size;
            b.y1 = (r1 + 1) * gt.patch_size;
            b.frame = t;
            b.slot = o;
            b.label = gt.class_names[gt.objects[o].class_id];
            boxes[t].push_back(b);
        }
    }
    return boxes;
}

Scene generate_scene(const SceneConfig& config) {
    config.validate();
    const GridShape grid = config.grid();
    std::mt19937_64 rng(mix_seed(config.seed, 1));

    Scene scene;
    GroundTruth& gt = scene.truth;
    gt.grid = grid;
    gt.patch_size = config.patch_size;
    gt.class_names = config.class_catalog;
    gt.background_class = config.background_class;
    gt.instance.assign(grid.size(), -1);

    std::vector<int> classes(config.class_catalog.size());
    std::iota(classes.begin(), classes.end(), 0);
    std::shuffle(classes.begin(), classes.end(), rng);

    std::uniform_real_distribution<double> speed(-config.max_speed, config.max_speed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int o = 0; o < config.num_objects; ++o) {
        SceneObject obj;
        obj.class_id = classes[o];
        std::uniform_int_distribution<int> extent(config.min_extent, config.max_extent);
        obj.rows = extent(rng);
        obj.cols = extent(rng);
        if (config.max_extent >= 3 && unit(rng) < 0.3) {
            obj.shape = SpriteShape::Cross;
            obj.rows = obj.cols = 3;
        }
        obj.row0 = std::uniform_int_distribution<int>(0, grid.rows - obj.rows)(rng);
        obj.col0 = std::uniform_int_distribution<int>(0, grid.cols - obj.cols)(rng);
        obj.vrow = speed(rng);
        obj.vcol = speed(rng);
        gt.objects.push_back(obj);
    }

    // Later objects occlude earlier ones, which keeps masks disjoint.
    for (int o = 0; o < config.num_objects; ++o) {
        const auto& obj = gt.objects[o];
        const auto cells = sprite_cells(obj);
        for (int t = 0; t < grid.frames; ++t) {
            const int r0 = sprite_offset(obj.row0, obj.vrow, t);
            const int c0 = sprite_offset(obj.col0, obj.vcol, t);
            for (auto [dr, dc] : cells) {
                const int r = r0 + dr, c = c0 + dc;
                if (r < 0 || c < 0 || r >= grid.rows || c >= grid.cols) continue;
                gt.instance[grid.index(t, r, c)] = static_cast<std::int16_t>(o);
            }
        }
    }

    gt.boxes = truth_boxes(gt);

    VideoClip& clip = scene.clip;
    clip.frames = config.num_frames;
    clip.height = config.height;
    clip.width = config.width;
    clip.pixels.resize(static_cast<std::size_t>(clip.frames) * clip.height * clip.width * 3);
    for (int t = 0; t < clip.frames; ++t)
        for (int y = 0; y < clip.height; ++y)
            for (int x = 0; x < clip.width; ++x) {
                const int inst = gt.instance_at(t, y / config.patch_size, x / config.patch_size);
                const auto col = class_color(inst < 0 ? -1 : gt.objects[inst].class_id);
                for (int ch = 0; ch < 3; ++ch) clip.pixels[clip.index(t, y, x, ch)] = col[ch];
            }
    return scene;
}

namespace {

Matrix gaussian_matrix(int rows, int cols, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
}

}  // namespace

OracleFeatureBackend make_feature_backend(int num_classes, int dim, double radius, double margin,
                                          double noise_std, std::uint64_t seed) {
    if (num_classes < 0 || dim < 1) throw ConfigError("invalid feature backend shape");
    std::mt19937_64 rng(mix_seed(seed, 2));
    for (int attempt = 0; attempt < 1000; ++attempt) {
        Matrix c = gaussian_matrix(num_classes + 1, dim, rng);
        for (Eigen::Index i = 0; i < c.rows(); ++i) c.row(i) *= radius / c.row(i).norm();
        double min_dist = std::numeric_limits<double>::infinity();
        for (Eigen::Index i = 0; i < c.rows(); ++i)
            for (Eigen::Index j = i + 1; j < c.rows(); ++j) min_dist = std::min(min_dist, (c.row(i) - c.row(j)).norm());
        if (min_dist >= margin) {
            OracleFeatureBackend b;
            b.class_centers = c.topRows(num_classes);
            b.background_center = c.row(num_classes).transpose();
            b.noise_std = noise_std;
            b.margin = margin;
            return b;
        }
    }
    throw ConfigError("could not place feature centers with the requested margin");
}

FeatureVolume oracle_features(const VideoClip& clip, const GroundTruth& gt, const OracleFeatureBackend& backend,
                              std::uint64_t noise_seed) {
    if (gt.patch_size < 1 || clip.frames != gt.grid.frames || clip.height != gt.grid.rows * gt.patch_size ||
        clip.width != gt.grid.cols * gt.patch_size || gt.instance.size() != gt.grid.size())
        throw InputError("clip and ground truth describe different scenes");
    FeatureVolume fv;
    fv.shape = gt.grid;
    fv.patch_size = gt.patch_size;
    fv.features.resize(static_cast<Eigen::Index>(gt.grid.size()), backend.dim());
    std::mt19937_64 rng(mix_seed(noise_seed, 3));
    std::normal_distribution<double> noise(0.0, 1.0);
    const auto classes = gt.patch_classes();
    for (std::size_t j = 0; j < classes.size(); ++j) {
        if (classes[j] >= backend.class_centers.rows()) throw InputError("object class outside the backend");
        auto row = fv.features.row(static_cast<Eigen::Index>(j));
        if (classes[j] < 0)
            row = backend.background_center.transpose();
        else
            row = backend.class_centers.row(classes[j]);
        for (Eigen::Index d = 0; d < row.size(); ++d) row(d) += backend.noise_std * noise(rng);
    }
    return fv;
}

int OracleSemanticTeacher::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return static_cast<int>(i);
    throw InputError("teacher has no class named '" + name + "'");
}

Vector OracleSemanticTeacher::embed_text(const std::string& prompt, const std::string& prompt_template) const {
    static const std::string token = "[CLASS]";
    const auto pos = prompt_template.find(token);
    for (std::size_t i = 0; i < names.size(); ++i) {
        std::string rendered = prompt_template;
        if (pos != std::string::npos) rendered.replace(pos, token.size(), names[i]);
        if (rendered == prompt) return centers.row(static_cast<Eigen::Index>(i)).transpose();
    }
    throw InputError("teacher cannot embed prompt '" + prompt + "'");
}

OracleSemanticTeacher make_semantic_teacher(const std::vector<std::string>& class_names,
                                            const std::vector<std::string>& background_names, int dim,
                                            double noise_std, std::uint64_t seed, double center_norm) {
    OracleSemanticTeacher t;
    t.names = class_names;
    t.names.insert(t.names.end(), background_names.begin(), background_names.end());
    if (t.names.empty() || dim < 2) throw ConfigError("invalid semantic teacher shape");
    if (!(center_norm > 0.0)) throw ConfigError("center_norm must be > 0");
    t.noise_std = noise_std;
    std::mt19937_64 rng(mix_seed(seed, 4));
    t.centers = gaussian_matrix(static_cast<int>(t.names.size()), dim, rng);
    for (Eigen::Index i = 0; i < t.centers.rows(); ++i) t.centers.row(i) *= center_norm / t.centers.row(i).norm();

    for (int attempt = 0; attempt < 10000; ++attempt) {
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(Eigen::MatrixXd(gaussian_matrix(dim, dim, rng)));
        Matrix q = qr.householderQ();
        const Matrix rotated = t.centers * q.transpose();  // rows: R c_i
        const Matrix sims = rotated * t.centers.transpose();
        bool self_retrieved = false;
        for (Eigen::Index i = 0; i < sims.rows() && !self_retrieved; ++i) {
            Eigen::Index best;
            sims.row(i).maxCoeff(&best);
            self_retrieved = (best == i);
        }
        if (!self_retrieved || t.names.size() == 1) {
            t.rotation = q;
            return t;
        }
    }
    throw ConfigError("could not find a decorrelating rotation");
}

namespace {

int dominant_object(const GroundTruth& gt, int frame) {
    std::vector<int> area(gt.objects.size(), 0);
    for (int r = 0; r < gt.grid.rows; ++r)
        for (int c = 0; c < gt.grid.cols; ++c) {
            const int inst = gt.instance_at(frame, r, c);
            if (inst >= 0) ++area[inst];
        }
    int best = -1;
    for (std::size_t o = 0; o < area.size(); ++o)
        if (area[o] > 0 && (best < 0 || area[o] > area[best])) best = static_cast<int>(o);
    return best;
}

std::vector<int> teacher_index_of_classes(const GroundTruth& gt, const OracleSemanticTeacher& teacher) {
    std::vector<int> idx;
    for (const auto& name : gt.class_names) idx.push_back(teacher.index_of(name));
    return idx;
}

}  // namespace

TeacherOutput oracle_semantics(const GroundTruth& gt, int frame, const OracleSemanticTeacher& teacher,
                               std::uint64_t noise_seed) {
    if (frame < 0 || frame >= gt.grid.frames) throw InputError("frame index out of range");
    const int bg = teacher.index_of(gt.background_class);
    std::mt19937_64 rng(mix_seed(noise_seed, 5 + static_cast<std::uint64_t>(frame)));
    std::normal_distribution<double> noise(0.0, teacher.noise_std);

    const auto to_teacher = teacher_index_of_classes(gt, teacher);
    TeacherOutput out;
    const int dom_obj = dominant_object(gt, frame);
    const int dom = dom_obj < 0 ? bg : to_teacher[gt.objects[dom_obj].class_id];
    out.summary = teacher.centers.row(dom).transpose();
    for (Eigen::Index d = 0; d < out.summary.size(); ++d) out.summary(d) += noise(rng);

    const auto m = static_cast<Eigen::Index>(gt.grid.frame_size());
    out.patches.resize(m, teacher.dim());
    for (int r = 0; r < gt.grid.rows; ++r)
        for (int c = 0; c < gt.grid.cols; ++c) {
            const int inst = gt.instance_at(frame, r, c);
            const int cls = inst < 0 ? bg : to_teacher[gt.objects[inst].class_id];
            auto row = out.patches.row(static_cast<Eigen::Index>(r) * gt.grid.cols + c);
            row = teacher.centers.row(cls);
            for (Eigen::Index d = 0; d < row.size(); ++d) row(d) += noise(rng);
        }
    if (teacher.rotate_patches) out.patches = out.patches * teacher.rotation.transpose();
    return out;
}

double patch_retrieval_accuracy(const Matrix& patch_tokens, const GroundTruth& gt, int frame,
                                const OracleSemanticTeacher& teacher, bool objects_only) {
    const int bg = teacher.index_of(gt.background_class);
    const auto to_teacher = teacher_index_of_classes(gt, teacher);
    int hits = 0, total = 0;
    for (int r = 0; r < gt.grid.rows; ++r)
        for (int c = 0; c < gt.grid.cols; ++c) {
            const int inst = gt.instance_at(frame, r, c);
            if (objects_only && inst < 0) continue;
            const int cls = inst < 0 ? bg : to_teacher[gt.objects[inst].class_id];
            const auto p = patch_tokens.row(static_cast<Eigen::Index>(r) * gt.grid.cols + c);
            const double pn = p.norm();
            int best = 0;
            double best_sim = -std::numeric_limits<double>::infinity();
            for (Eigen::Index k = 0; k < teacher.centers.rows(); ++k) {
                const double s = pn > 0 ? p.dot(teacher.centers.row(k)) / pn : 0.0;
                if (s > best_sim) {
                    best_sim = s;
                    best = static_cast<int>(k);
                }
            }
            ++total;
            if (best == cls) ++hits;
        }
    return total == 0 ? 0.0 : static_cast<double>(hits) / total;
}

}  // namespace vslot
