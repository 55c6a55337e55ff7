#include "vslot/labeling.hpp"

#include <algorithm>
#include <set>
#include <sstream>

namespace vslot {

const char* label_kind_name(LabelKind k) {
    switch (k) {
        case LabelKind::Target: return "target";
        case LabelKind::Background: return "background";
        case LabelKind::None: return "none";
    }
    return "none";
}

LabelKind label_kind_from_name(const std::string& s) {
    if (s == "target") return LabelKind::Target;
    if (s == "background") return LabelKind::Background;
    if (s == "none") return LabelKind::None;
    throw FormatError("unknown label kind '" + s + "'");
}

std::optional<int> Vocabulary::find(const std::string& name) const {
    for (std::size_t i = 0; i < entries.size(); ++i)
        if (entries[i].name == name) return static_cast<int>(i);
    return std::nullopt;
}

Matrix Vocabulary::text_matrix() const {
    if (entries.empty()) return Matrix();
    Matrix m(entries.size(), entries.front().text_feature.size());
    for (std::size_t i = 0; i < entries.size(); ++i) m.row(i) = entries[i].text_feature.transpose();
    return m;
}

std::vector<std::string> Vocabulary::names(LabelKind kind) const {
    std::vector<std::string> out;
    for (const auto& e : entries)
        if (e.kind == kind) out.push_back(e.name);
    return out;
}

std::string normalize_class_name(const std::string& raw) {
    std::vector<std::string> parts;
    std::string cur;
    for (char ch : raw) {
        if (ch == '-') {
            parts.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(ch == '_' ? ' ' : ch);
        }
    }
    parts.push_back(cur);
    std::string out;
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) {
        if (it->empty()) continue;
        if (!out.empty()) out.push_back(' ');
        out += *it;
    }
    return out;
}

std::string render_prompt(const std::string& prompt_template, const std::string& name) {
    static const std::string token = "[CLASS]";
    const auto pos = prompt_template.find(token);
    if (pos == std::string::npos) throw ConfigError("prompt template lacks [CLASS]: " + prompt_template);
    std::string out = prompt_template;
    out.replace(pos, token.size(), name);
    return out;
}

Vocabulary build_vocabulary(const std::vector<std::string>& target_names,
                            const std::vector<std::string>& background_names,
                            const TextEmbedder& embed, const std::string& prompt_template) {
    if (target_names.empty() && background_names.empty()) throw ConfigError("vocabulary is empty");
    Vocabulary vocab;
    vocab.prompt_template = prompt_template;
    std::set<std::string> seen;
    auto add = [&](const std::string& raw, LabelKind kind) {
        const std::string name = normalize_class_name(raw);
        if (name.empty()) throw ConfigError("empty class name in vocabulary");
        if (!seen.insert(name).second) throw ConfigError("duplicate vocabulary name '" + name + "'");
        Vector f = embed(render_prompt(prompt_template, name));
        const double n = f.norm();
        if (!(n > 0.0) || !f.allFinite()) throw NumericError("text embedding of '" + name + "' has zero norm");
        vocab.entries.push_back({name, kind, f / n});
    };
    for (const auto& n : target_names) add(n, LabelKind::Target);
    for (const auto& n : background_names) add(n, LabelKind::Background);
    return vocab;
}

SlotFeatures slot_semantic_features(const SemanticVolume& semvol, const AssignmentMap& assignment) {
    if (!(semvol.shape == assignment.shape()) ||
        static_cast<std::size_t>(semvol.features.rows()) != semvol.shape.size())
        throw InputError("semantic volume and assignment map cover different grids");
    const int k = assignment.num_slots();
    SlotFeatures out;
    out.features = Matrix::Zero(k, semvol.dim());
    out.counts.assign(k, 0);
    const auto& owner = assignment.data();
    for (std::size_t j = 0; j < owner.size(); ++j) {
        out.features.row(owner[j]) += semvol.features.row(j);
        ++out.counts[owner[j]];
    }
    out.empty.assign(k, false);
    for (int i = 0; i < k; ++i) {
        if (out.counts[i] == 0)
            out.empty[i] = true;
        else
            out.features.row(i) /= static_cast<double>(out.counts[i]);
    }
    return out;
}

Matrix cosine_matrix(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows(), b.rows());
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        const double na = a.row(i).norm();
        for (Eigen::Index j = 0; j < b.rows(); ++j) {
            const double nb = b.row(j).norm();
            out(i, j) = (na > 0.0 && nb > 0.0) ? a.row(i).dot(b.row(j)) / (na * nb) : 0.0;
        }
    }
    return out;
}

LabeledSlotSet label_slots(const SlotFeatures& slot_features, const Vocabulary& vocab, double lambda) {
    if (vocab.size() == 0) throw ConfigError("vocabulary is empty");
    LabeledSlotSet out;
    out.lambda = lambda;
    out.features = slot_features.features;
    out.text_features = vocab.text_matrix();
    for (const auto& e : vocab.entries) {
        out.names.push_back(e.name);
        out.kinds.push_back(e.kind);
    }
    out.similarity = cosine_matrix(out.features, out.text_features);

    const auto k = static_cast<std::size_t>(slot_features.features.rows());
    out.slots.resize(k);
    for (std::size_t i = 0; i < k; ++i) {
        SlotLabel& s = out.slots[i];
        s.slot_id = static_cast<int>(i);
        s.patch_count = slot_features.counts.empty() ? 0 : slot_features.counts[i];
        s.empty = !slot_features.empty.empty() && slot_features.empty[i];
        if (s.empty) continue;
        int best = 0;
        for (Eigen::Index j = 1; j < out.similarity.cols(); ++j)
            if (out.similarity(i, j) > out.similarity(i, best)) best = static_cast<int>(j);
        s.score = out.similarity(i, best);
        if (s.score >= lambda) {
            s.label = best;
            s.kind = vocab.entries[best].kind;
        }
    }
    return out;
}

}  // namespace vslot
