#include "vslot/evaluation.hpp"

#include "vslot/assignment.hpp"

#include "json.hpp"

#include <algorithm>
#include <iostream>
#include <limits>
#include <numeric>
#include <set>
#include <tuple>
#include <utility>

namespace vslot {

const char* slot_type_name(SlotType t) {
    switch (t) {
        case SlotType::SO: return "SO";
        case SlotType::PO: return "PO";
        case SlotType::GO: return "GO";
        case SlotType::BG: return "BG";
    }
    return "?";
}

long long intersection_area(const Box& a, const Box& b) {
    const long long w = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
    const long long h = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
    if (w <= 0 || h <= 0) return 0;
    return w * h;
}

double iou(const Box& a, const Box& b) {
    const long long inter = intersection_area(a, b);
    if (inter == 0) return 0.0;
    const long long uni = a.area() + b.area() - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<Box> mask_to_boxes(const AssignmentMap& assignment, int slot, int patch_size) {
    const auto& g = assignment.shape();
    std::vector<Box> out;
    for (int t = 0; t < g.frames; ++t) {
        int r0 = g.rows, r1 = -1, c0 = g.cols, c1 = -1;
        for (int r = 0; r < g.rows; ++r) {
            for (int c = 0; c < g.cols; ++c) {
                if (assignment.at(t, r, c) != slot) continue;
                r0 = std::min(r0, r);
                r1 = std::max(r1, r);
                c0 = std::min(c0, c);
                c1 = std::max(c1, c);
            }
        }
        if (r1 < 0) continue;
        Box b;
        b.x0 = c0 * patch_size;
        b.y0 = r0 * patch_size;
        b.x1 = (c1 + 1) * patch_size;
        b.y1 = (r1 + 1) * patch_size;
        b.frame = t;
        b.slot = slot;
        out.push_back(b);
    }
    return out;
}

namespace {

bool frame_hit(const std::vector<Box>& pred, const std::vector<Box>& gt, double threshold) {
    for (const auto& p : pred)
        for (const auto& g : gt)
            if (iou(p, g) > threshold) return true;
    return false;
}

void require_aligned(const FrameBoxes& pred, const FrameBoxes& gt) {
    if (pred.size() != gt.size())
        throw InputError("prediction and ground-truth frame counts differ");
}

}  // namespace

double corloc(const FrameBoxes& pred, const FrameBoxes& gt, double threshold) {
    require_aligned(pred, gt);
    int frames = 0, hits = 0;
    for (std::size_t t = 0; t < gt.size(); ++t) {
        if (gt[t].empty()) continue;
        ++frames;
        if (frame_hit(pred[t], gt[t], threshold)) ++hits;
    }
    return frames == 0 ? 0.0 : static_cast<double>(hits) / frames;
}

double corloc_per_video(const std::vector<FrameBoxes>& pred, const std::vector<FrameBoxes>& gt,
                        double threshold) {
    if (pred.size() != gt.size()) throw InputError("prediction and ground-truth video counts differ");
    double sum = 0.0;
    int videos = 0;
    for (std::size_t v = 0; v < gt.size(); ++v) {
        const bool has_gt = std::any_of(gt[v].begin(), gt[v].end(), [](const auto& f) { return !f.empty(); });
        if (!has_gt) continue;
        sum += corloc(pred[v], gt[v], threshold);
        ++videos;
    }
    return videos == 0 ? 0.0 : sum / videos;
}

int greedy_match_count(const std::vector<Box>& pred, const std::vector<Box>& gt, double threshold) {
    struct Pair {
        double iou;
        std::size_t p, g;
    };
    std::vector<Pair> pairs;
    for (std::size_t i = 0; i < pred.size(); ++i)
        for (std::size_t j = 0; j < gt.size(); ++j) {
            const double v = iou(pred[i], gt[j]);
            if (v > threshold) pairs.push_back({v, i, j});
        }
    std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) { return a.iou > b.iou; });
    std::vector<char> pred_used(pred.size(), 0), gt_used(gt.size(), 0);
    int matched = 0;
    for (const auto& pr : pairs) {
        if (pred_used[pr.p] || gt_used[pr.g]) continue;
        pred_used[pr.p] = gt_used[pr.g] = 1;
        ++matched;
    }
    return matched;
}

double decrate(const FrameBoxes& pred, const FrameBoxes& gt, double threshold) {
    require_aligned(pred, gt);
    long long total = 0, detected = 0;
    for (std::size_t t = 0; t < gt.size(); ++t) {
        total += static_cast<long long>(gt[t].size());
        detected += greedy_match_count(pred[t], gt[t], threshold);
    }
    return total == 0 ? 0.0 : static_cast<double>(detected) / static_cast<double>(total);
}

ApResult map50(const std::vector<Box>& pred, const std::vector<Box>& gt,
               const std::vector<std::string>& known_classes, double threshold) {
    ApResult result;
    const std::set<std::string> known(known_classes.begin(), known_classes.end());

    std::map<std::string, std::vector<const Box*>> preds_by_class;
    for (const auto& p : pred) {
        if (!p.label || (!known.empty() && !known.count(*p.label))) {
            ++result.dropped_predictions;
            continue;
        }
        preds_by_class[*p.label].push_back(&p);
    }
    if (result.dropped_predictions > 0)
        std::cerr << "warning: dropped " << result.dropped_predictions
                  << " prediction(s) with unknown class\n";

    std::map<std::string, std::vector<std::size_t>> gts_by_class;
    for (std::size_t j = 0; j < gt.size(); ++j) {
        if (!gt[j].label) throw InputError("ground-truth box without a class label");
        gts_by_class[*gt[j].label].push_back(j);
    }
    if (gts_by_class.empty()) return result;

    double sum = 0.0;
    for (const auto& [cls, gt_ids] : gts_by_class) {
        std::vector<const Box*> cand = preds_by_class[cls];
        std::stable_sort(cand.begin(), cand.end(), [](const Box* a, const Box* b) {
            return a->score.value_or(0.0) > b->score.value_or(0.0);
        });
        std::vector<char> used(gt_ids.size(), 0);
        std::vector<int> tp(cand.size(), 0);
        for (std::size_t i = 0; i < cand.size(); ++i) {
            double best = threshold;
            std::ptrdiff_t best_j = -1;
            for (std::size_t j = 0; j < gt_ids.size(); ++j) {
                const Box& g = gt[gt_ids[j]];
                if (used[j] || g.video != cand[i]->video || g.frame != cand[i]->frame) continue;
                const double v = iou(*cand[i], g);
                if (v > best) {
                    best = v;
                    best_j = static_cast<std::ptrdiff_t>(j);
                }
            }
            if (best_j >= 0) {
                used[best_j] = 1;
                tp[i] = 1;
            }
        }
        // All-point interpolation: precision envelope integrated over recall steps.
        const double npos = static_cast<double>(gt_ids.size());
        std::vector<double> precision(cand.size()), recall(cand.size());
        double ctp = 0.0;
        for (std::size_t i = 0; i < cand.size(); ++i) {
            ctp += tp[i];
            precision[i] = ctp / static_cast<double>(i + 1);
            recall[i] = ctp / npos;
        }
        for (std::ptrdiff_t i = static_cast<std::ptrdiff_t>(cand.size()) - 2; i >= 0; --i)
            precision[i] = std::max(precision[i], precision[i + 1]);
        double ap = 0.0, prev_recall = 0.0;
        for (std::size_t i = 0; i < cand.size(); ++i) {
            ap += (recall[i] - prev_recall) * precision[i];
            prev_recall = recall[i];
        }
        result.per_class[cls] = ap;
        sum += ap;
    }
    result.map = sum / static_cast<double>(gts_by_class.size());
    return result;
}

SlotType classify_slot(const Box& pred, const std::vector<Box>& gts, TaxonomyThresholds th) {
    const double pred_area = static_cast<double>(pred.area());
    int covered_gts = 0;
    bool iou_hit = false, part_hit = false;
    for (const auto& g : gts) {
        const double inter = static_cast<double>(intersection_area(pred, g));
        if (iou(pred, g) > th.tau1) iou_hit = true;
        if (inter / static_cast<double>(g.area()) > th.tau2) ++covered_gts;
        if (pred_area > 0 && inter / pred_area > th.tau2) part_hit = true;
    }
    if (iou_hit || covered_gts == 1) return SlotType::SO;
    if (part_hit) return SlotType::PO;
    if (covered_gts > 1) return SlotType::GO;
    return SlotType::BG;
}

SlotType aggregate_slot_type(const std::vector<SlotType>& per_frame) {
    std::array<int, 4> votes{0, 0, 0, 0};
    for (auto t : per_frame) ++votes[static_cast<int>(t)];
    int best = 3;
    for (int i = 3; i >= 0; --i)
        if (votes[i] >= votes[best]) best = i;
    return static_cast<SlotType>(best);
}

std::array<double, 4> slot_type_stats(const std::vector<SlotType>& slots) {
    std::array<double, 4> pct{0, 0, 0, 0};
    if (slots.empty()) return pct;
    for (auto t : slots) pct[static_cast<int>(t)] += 1.0;
    for (auto& v : pct) v = 100.0 * v / static_cast<double>(slots.size());
    return pct;
}

std::string to_json(const EvalReport& report) {
    nlohmann::json j;
    j["corloc"] = report.corloc;
    j["decrate"] = report.decrate;
    j["map50"] = report.map50;
    j["slot_types"] = {{"SO", report.slot_types[0]},
                       {"PO", report.slot_types[1]},
                       {"GO", report.slot_types[2]},
                       {"BG", report.slot_types[3]}};
    j["per_class_ap"] = report.per_class_ap;
    j["num_slots"] = report.num_slots;
    return j.dump(2);
}

EvalReport eval_report_from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    EvalReport r;
    r.corloc = j.at("corloc").get<double>();
    r.decrate = j.at("decrate").get<double>();
    r.map50 = j.at("map50").get<double>();
    const auto& st = j.at("slot_types");
    r.slot_types = {st.at("SO").get<double>(), st.at("PO").get<double>(), st.at("GO").get<double>(),
                    st.at("BG").get<double>()};
    r.per_class_ap = j.at("per_class_ap").get<std::map<std::string, double>>();
    r.num_slots = j.at("num_slots").get<int>();
    return r;
}

}  // namespace vslot
