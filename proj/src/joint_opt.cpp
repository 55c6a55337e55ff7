#include "vslot/joint_opt.hpp"

#include "json.hpp"

#include <optional>

namespace vslot {

Connectivity connectivity_from_int(int n) {
    if (n == 4) return Connectivity::Four;
    if (n == 8) return Connectivity::Eight;
    throw ConfigError("connectivity must be 4 or 8, got " + std::to_string(n));
}

bool spatial_neighbors(const AssignmentMap& assignment, int slot_a, int slot_b, int frame, Connectivity conn) {
    if (slot_a == slot_b) throw InputError("spatial_neighbors needs two distinct slots");
    const auto& g = assignment.shape();
    static constexpr int d4[4][2] = {{0, 1}, {1, 0}, {0, -1}, {-1, 0}};
    static constexpr int d8[8][2] = {{0, 1}, {1, 0}, {0, -1}, {-1, 0}, {1, 1}, {1, -1}, {-1, 1}, {-1, -1}};
    const int nd = conn == Connectivity::Four ? 4 : 8;
    const auto& dirs = conn == Connectivity::Four ? d4 : d8;
    for (int r = 0; r < g.rows; ++r) {
        for (int c = 0; c < g.cols; ++c) {
            if (assignment.at(frame, r, c) != slot_a) continue;
            for (int k = 0; k < nd; ++k) {
                const int rr = r + dirs[k][0], cc = c + dirs[k][1];
                if (rr < 0 || cc < 0 || rr >= g.rows || cc >= g.cols) continue;
                if (assignment.at(frame, rr, cc) == slot_b) return true;
            }
        }
    }
    return false;
}

int MergeResult::live_slots() const {
    int n = 0;
    for (auto c : assignment.counts())
        if (c > 0) ++n;
    return n;
}

namespace {

std::optional<int> first_contact_frame(const AssignmentMap& a, int i, int j, Connectivity conn) {
    for (int t = 0; t < a.shape().frames; ++t)
        if (spatial_neighbors(a, i, j, t, conn)) return t;
    return std::nullopt;
}

}  // namespace

MergeResult merge_slots(const LabeledSlotSet& labeled, const AssignmentMap& assignment, Connectivity conn) {
    if (labeled.slots.size() != static_cast<std::size_t>(assignment.num_slots()))
        throw InputError("labeled slot count does not match the assignment map");
    MergeResult res{assignment, labeled, {}};
    auto& slots = res.labeled.slots;
    const int k = static_cast<int>(slots.size());

    bool changed = true;
    while (changed) {
        changed = false;
        for (int i = 0; i < k && !changed; ++i) {
            if (!slots[i].named() || slots[i].empty) continue;
            for (int j = i + 1; j < k && !changed; ++j) {
                if (!slots[j].named() || slots[j].empty || slots[j].label != slots[i].label) continue;
                const auto witness = first_contact_frame(res.assignment, i, j, conn);
                if (!witness) continue;

                for (auto& o : res.assignment.data())
                    if (o == j) o = static_cast<std::uint16_t>(i);
                const double ni = static_cast<double>(slots[i].patch_count);
                const double nj = static_cast<double>(slots[j].patch_count);
                res.labeled.features.row(i) =
                    (ni * res.labeled.features.row(i) + nj * res.labeled.features.row(j)) / (ni + nj);
                res.labeled.features.row(j).setZero();
                slots[i].patch_count += slots[j].patch_count;

                if (res.labeled.text_features.size() > 0) {
                    res.labeled.similarity.row(i) = cosine_matrix(res.labeled.features.row(i), res.labeled.text_features);
                    res.labeled.similarity.row(j).setZero();
                    slots[i].score = res.labeled.similarity(i, slots[i].label);
                }
                slots[j] = SlotLabel{};
                slots[j].slot_id = j;
                slots[j].empty = true;

                res.log.push_back({i, j, *witness});
                changed = true;
            }
        }
    }
    return res;
}

LabeledSlotSet remove_background(const MergeResult& merged) {
    const LabeledSlotSet& in = merged.labeled;
    LabeledSlotSet out;
    out.text_features = in.text_features;
    out.names = in.names;
    out.kinds = in.kinds;
    out.lambda = in.lambda;
    std::vector<Eigen::Index> keep;
    for (std::size_t i = 0; i < in.slots.size(); ++i) {
        const auto& s = in.slots[i];
        if (s.empty || !s.named() || s.kind != LabelKind::Target) continue;
        out.slots.push_back(s);
        keep.push_back(static_cast<Eigen::Index>(i));
    }
    out.features.resize(static_cast<Eigen::Index>(keep.size()), in.features.cols());
    out.similarity.resize(static_cast<Eigen::Index>(keep.size()), in.similarity.cols());
    for (std::size_t r = 0; r < keep.size(); ++r) {
        out.features.row(r) = in.features.row(keep[r]);
        out.similarity.row(r) = in.similarity.row(keep[r]);
    }
    return out;
}

std::string merge_log_json(const MergeResult& merged) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& e : merged.log)
        j.push_back({{"slot_a", e.slot_a}, {"slot_b", e.slot_b}, {"frame_witness", e.frame_witness}});
    return j.dump(2);
}

}  // namespace vslot
