#pragma once

#include "vslot/assignment.hpp"
#include "vslot/common.hpp"
#include "vslot/volumes.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace vslot {

enum class LabelKind : std::uint8_t { Target = 0, Background = 1, None = 2 };

const char* label_kind_name(LabelKind k);
LabelKind label_kind_from_name(const std::string& s);

inline constexpr const char* kDefaultPromptTemplate = "a photo of a [CLASS]";
inline constexpr int kUnnamed = -1;

struct VocabEntry {
    std::string name;
    LabelKind kind = LabelKind::Target;
    Vector text_feature;  // unit norm
};

struct Vocabulary {
    std::vector<VocabEntry> entries;
    std::string prompt_template = kDefaultPromptTemplate;

    std::size_t size() const { return entries.size(); }
    std::optional<int> find(const std::string& name) const;
    /// N x D_sem matrix of the (unit-norm) text features.
    Matrix text_matrix() const;
    std::vector<std::string> names(LabelKind kind) const;
};

using TextEmbedder = std::function<Vector(const std::string& prompt)>;

/// Dataset-style class names into plain phrases: "wall-concrete" becomes
/// "concrete wall", underscores become spaces.
std::string normalize_class_name(const std::string& raw);
std::string render_prompt(const std::string& prompt_template, const std::string& name);

Vocabulary build_vocabulary(const std::vector<std::string>& target_names,
                            const std::vector<std::string>& background_names,
                            const TextEmbedder& embed,
                            const std::string& prompt_template = kDefaultPromptTemplate);

struct SlotFeatures {
    Matrix features;                   // K x D_sem, zero rows for empty slots
    std::vector<std::size_t> counts;   // patches owned per slot
    std::vector<bool> empty;
};

SlotFeatures slot_semantic_features(const SemanticVolume& semvol, const AssignmentMap& assignment);

struct SlotLabel {
    int slot_id = 0;
    int label = kUnnamed;       // vocabulary index, or kUnnamed
    double score = 0.0;         // max cosine over the vocabulary (0 for empty slots)
    LabelKind kind = LabelKind::None;
    std::size_t patch_count = 0;
    bool empty = false;

    bool named() const { return label != kUnnamed; }
};

struct LabeledSlotSet {
    std::vector<SlotLabel> slots;
    Matrix features;        // one row per entry of `slots`
    Matrix similarity;      // A: rows follow `slots`, columns follow the vocabulary
    Matrix text_features;   // copy of the vocabulary's unit text features
    std::vector<std::string> names;
    std::vector<LabelKind> kinds;
    double lambda = 0.0;

    std::string label_name(std::size_t i) const {
        return slots[i].named() ? names[slots[i].label] : std::string("UNNAMED");
    }
};

/// Names each slot by its most similar text feature; slots whose best
/// cosine is below lambda, and empty slots, stay UNNAMED. Ties go to the
/// lowest vocabulary index.
LabeledSlotSet label_slots(const SlotFeatures& slot_features, const Vocabulary& vocab, double lambda = 0.0);

/// Cosine similarity of every row of `a` against every row of `b`.
/// Zero-norm rows produce zero similarities.
Matrix cosine_matrix(const Matrix& a, const Matrix& b);

}  // namespace vslot
