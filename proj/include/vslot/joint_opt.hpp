#pragma once

#include "vslot/assignment.hpp"
#include "vslot/labeling.hpp"

#include <string>
#include <vector>

namespace vslot {

enum class Connectivity { Four = 4, Eight = 8 };

Connectivity connectivity_from_int(int n);

/// True iff, in frame t, some patch of slot_a touches some patch of slot_b
/// (edge contact for Four, edge or corner contact for Eight).
bool spatial_neighbors(const AssignmentMap& assignment, int slot_a, int slot_b, int frame,
                       Connectivity conn = Connectivity::Four);

struct MergeEvent {
    int slot_a = 0;   // surviving slot
    int slot_b = 0;   // absorbed slot
    int frame_witness = 0;
};

struct MergeResult {
    AssignmentMap assignment;
    LabeledSlotSet labeled;
    std::vector<MergeEvent> log;

    /// Slots that still own at least one patch.
    int live_slots() const;
};

/// Repeatedly merges the lexicographically first pair of slots that share a
/// named label and touch in at least one frame, until no such pair exists.
/// The absorbed slot's patches move to the lower-index survivor; the
/// survivor keeps its label, and its feature becomes the patch-count weighted
/// mean. Absorbed slots are left empty and UNNAMED.
MergeResult merge_slots(const LabeledSlotSet& labeled, const AssignmentMap& assignment,
                        Connectivity conn = Connectivity::Four);

/// Keeps named target slots; drops background-labeled, UNNAMED and empty ones.
LabeledSlotSet remove_background(const MergeResult& merged);

std::string merge_log_json(const MergeResult& merged);

}  // namespace vslot
