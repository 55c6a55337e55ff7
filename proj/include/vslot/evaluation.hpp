#pragma once

#include "vslot/common.hpp"

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace vslot {

class AssignmentMap;

/// Axis-aligned box in pixel units, half-open: [x0, x1) x [y0, y1).
struct Box {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    int video = 0;
    int frame = 0;
    int slot = -1;
    std::optional<std::string> label;
    std::optional<double> score;

    long long area() const { return static_cast<long long>(x1 - x0) * (y1 - y0); }
    bool valid() const { return x0 < x1 && y0 < y1; }
};

/// Boxes grouped by frame: outer index is the frame.
using FrameBoxes = std::vector<std::vector<Box>>;

enum class SlotType { SO = 0, PO = 1, GO = 2, BG = 3 };
const char* slot_type_name(SlotType t);

long long intersection_area(const Box& a, const Box& b);
double iou(const Box& a, const Box& b);

/// Tight per-frame pixel boxes of one slot. Frames where the slot owns no
/// patch produce no entry, so the result can be shorter than T.
std::vector<Box> mask_to_boxes(const AssignmentMap& assignment, int slot, int patch_size);

/// Fraction of gt-bearing frames with at least one prediction at IoU > threshold.
double corloc(const FrameBoxes& pred, const FrameBoxes& gt, double threshold = 0.5);

/// Mean over videos of per-video CorLoc (videos without gt are skipped).
double corloc_per_video(const std::vector<FrameBoxes>& pred, const std::vector<FrameBoxes>& gt,
                        double threshold = 0.5);

/// Per-frame greedy one-to-one matching in descending IoU order.
/// Returns the number of gts matched at IoU > threshold.
int greedy_match_count(const std::vector<Box>& pred, const std::vector<Box>& gt,
                       double threshold = 0.5);

double decrate(const FrameBoxes& pred, const FrameBoxes& gt, double threshold = 0.5);

struct ApResult {
    double map = 0.0;
    std::map<std::string, double> per_class;
    int dropped_predictions = 0;
};

/// All-point interpolated AP per class at IoU > threshold; mAP averages over
/// classes that appear in the ground truth. Boxes are matched within the
/// same (video, frame). Predictions whose label is missing or not in
/// known_classes are dropped (an empty known_classes accepts everything).
ApResult map50(const std::vector<Box>& pred, const std::vector<Box>& gt,
               const std::vector<std::string>& known_classes = {}, double threshold = 0.5);

struct TaxonomyThresholds {
    double tau1 = 0.5;
    double tau2 = 0.5;
};

SlotType classify_slot(const Box& pred, const std::vector<Box>& gts, TaxonomyThresholds th = {});

/// Majority vote over a slot's per-frame types; ties go to SO > PO > GO > BG.
SlotType aggregate_slot_type(const std::vector<SlotType>& per_frame);

/// Percentages of SO, PO, GO, BG (in that order) over the given slot types.
std::array<double, 4> slot_type_stats(const std::vector<SlotType>& slots);

struct EvalReport {
    double corloc = 0.0;
    double decrate = 0.0;
    double map50 = 0.0;
    std::array<double, 4> slot_types{0, 0, 0, 0};
    std::map<std::string, double> per_class_ap;
    int num_slots = 0;
};

std::string to_json(const EvalReport& report);
EvalReport eval_report_from_json(const std::string& text);

}  // namespace vslot
