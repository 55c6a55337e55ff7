#pragma once

// Hand-rolled random generators and brute-force reference implementations
// shared by the unit tests and the acceptance runner.

#include "vslot/assignment.hpp"
#include "vslot/evaluation.hpp"
#include "vslot/labeling.hpp"
#include "vslot/nn.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace vslot::testing {

using Rng = std::mt19937_64;

inline int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }
inline double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

inline Matrix random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
}

// ---------------------------------------------------------------------------
// Boxes.

/// Box on a coarse lattice so that exact ties (IoU = 0.5, I/area = 0.5)
/// come up often.
inline Box random_box(Rng& rng, int extent = 20, int step = 5) {
    const int cells = extent / step;
    int a = uniform_int(rng, 0, cells - 1), b = uniform_int(rng, a + 1, cells);
    int c = uniform_int(rng, 0, cells - 1), d = uniform_int(rng, c + 1, cells);
    Box box;
    box.x0 = a * step;
    box.x1 = b * step;
    box.y0 = c * step;
    box.y1 = d * step;
    return box;
}

inline long long overlap(const Box& a, const Box& b) {
    long long n = 0;
    // Pixel scan: independent of the interval arithmetic under test.
    for (int y = std::max(a.y0, b.y0); y < std::min(a.y1, b.y1); ++y)
        for (int x = std::max(a.x0, b.x0); x < std::min(a.x1, b.x1); ++x) ++n;
    return n;
}

/// Slot type by the four rules, with thresholds as exact fractions num/den
/// and every comparison done in integers.
inline SlotType brute_classify(const Box& p, const std::vector<Box>& gts, long long num = 1, long long den = 2) {
    const long long ap = p.area();
    int big_cover = 0;
    for (const Box& g : gts) {
        const long long i = overlap(p, g);
        const long long u = ap + g.area() - i;
        if (i * den > num * u) return SlotType::SO;
        if (i * den > num * g.area()) ++big_cover;
    }
    if (big_cover == 1) return SlotType::SO;
    for (const Box& g : gts)
        if (overlap(p, g) * den > num * ap) return SlotType::PO;
    if (big_cover > 1) return SlotType::GO;
    return SlotType::BG;
}

/// Average precision per class: rank by score, match each prediction to the
/// best still-unclaimed gt of its frame, then sum the precision envelope at
/// every true positive.
inline std::map<std::string, double> reference_ap(const std::vector<Box>& pred, const std::vector<Box>& gt) {
    std::map<std::string, double> out;
    std::map<std::string, int> npos;
    for (const auto& g : gt) ++npos[*g.label];
    for (const auto& [cls, count] : npos) {
        std::vector<std::size_t> order;
        for (std::size_t i = 0; i < pred.size(); ++i)
            if (pred[i].label && *pred[i].label == cls) order.push_back(i);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return *pred[a].score > *pred[b].score; });
        std::vector<std::size_t> gts;
        for (std::size_t j = 0; j < gt.size(); ++j)
            if (*gt[j].label == cls) gts.push_back(j);
        // All-pairs IoU table, rows follow the ranking.
        std::vector<std::vector<double>> table(order.size(), std::vector<double>(gts.size(), 0.0));
        for (std::size_t i = 0; i < order.size(); ++i)
            for (std::size_t j = 0; j < gts.size(); ++j) {
                const Box& p = pred[order[i]];
                const Box& g = gt[gts[j]];
                if (p.video != g.video || p.frame != g.frame) continue;
                const long long inter = overlap(p, g);
                table[i][j] = static_cast<double>(inter) / static_cast<double>(p.area() + g.area() - inter);
            }
        std::vector<bool> claimed(gts.size(), false), hit(order.size(), false);
        for (std::size_t i = 0; i < order.size(); ++i) {
            std::size_t best = gts.size();
            for (std::size_t j = 0; j < gts.size(); ++j)
                if (!claimed[j] && table[i][j] > 0.5 && (best == gts.size() || table[i][j] > table[i][best])) best = j;
            if (best < gts.size()) claimed[best] = hit[i] = true;
        }
        double ap = 0.0;
        for (std::size_t i = 0; i < order.size(); ++i) {
            if (!hit[i]) continue;
            double envelope = 0.0;
            int tp = 0;
            for (std::size_t j = 0; j < order.size(); ++j) {
                tp += hit[j];
                if (j >= i) envelope = std::max(envelope, static_cast<double>(tp) / static_cast<double>(j + 1));
            }
            ap += envelope / count;
        }
        out[cls] = ap;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Partitions.

/// Random assignment made of a few axis-aligned blocks painted over a base
/// slot, so slots form contiguous regions most of the time.
inline AssignmentMap random_partition(Rng& rng, GridShape g, int k) {
    AssignmentMap a(g, k, static_cast<std::uint16_t>(uniform_int(rng, 0, k - 1)));
    const int blocks = uniform_int(rng, 1, 2 * k);
    for (int b = 0; b < blocks; ++b) {
        const int s = uniform_int(rng, 0, k - 1);
        const int r0 = uniform_int(rng, 0, g.rows - 1), c0 = uniform_int(rng, 0, g.cols - 1);
        const int r1 = uniform_int(rng, r0, g.rows - 1), c1 = uniform_int(rng, c0, g.cols - 1);
        const int t0 = uniform_int(rng, 0, g.frames - 1), t1 = uniform_int(rng, t0, g.frames - 1);
        for (int t = t0; t <= t1; ++t)
            for (int r = r0; r <= r1; ++r)
                for (int c = c0; c <= c1; ++c) a.at(t, r, c) = static_cast<std::uint16_t>(s);
    }
    return a;
}

/// Labels drawn from a three-word vocabulary (two targets, one background),
/// with some slots left UNNAMED; empty slots are always UNNAMED.
inline LabeledSlotSet random_labels(Rng& rng, const AssignmentMap& a, int sem_dim = 4) {
    const int k = a.num_slots();
    const auto counts = a.counts();
    LabeledSlotSet set;
    set.names = {"dog", "car", "sky"};
    set.kinds = {LabelKind::Target, LabelKind::Target, LabelKind::Background};
    set.text_features = random_matrix(rng, 3, sem_dim);
    set.text_features.rowwise().normalize();
    set.features = random_matrix(rng, k, sem_dim);
    set.similarity = cosine_matrix(set.features, set.text_features);
    for (int i = 0; i < k; ++i) {
        SlotLabel s;
        s.slot_id = i;
        s.patch_count = counts[static_cast<std::size_t>(i)];
        s.empty = s.patch_count == 0;
        const int pick = uniform_int(rng, -1, 2);
        if (!s.empty && pick >= 0) {
            s.label = pick;
            s.kind = set.kinds[static_cast<std::size_t>(pick)];
            s.score = set.similarity(i, pick);
        }
        if (s.empty) set.features.row(i).setZero();
        set.slots.push_back(s);
    }
    return set;
}

/// Final owner of every patch when same-label slots that touch in some
/// frame are joined transitively; each group collapses onto its lowest id.
inline std::vector<std::uint16_t> component_partition(const LabeledSlotSet& set, const AssignmentMap& a, bool eight) {
    const int k = a.num_slots();
    const GridShape& g = a.shape();
    std::vector<int> parent(static_cast<std::size_t>(k));
    std::iota(parent.begin(), parent.end(), 0);
    std::function<int(int)> find = [&](int x) { return parent[x] == x ? x : parent[x] = find(parent[x]); };
    auto joinable = [&](int i, int j) {
        const auto& a_ = set.slots[static_cast<std::size_t>(i)];
        const auto& b_ = set.slots[static_cast<std::size_t>(j)];
        return a_.label != kUnnamed && !a_.empty && !b_.empty && a_.label == b_.label;
    };
    for (int t = 0; t < g.frames; ++t)
        for (int r = 0; r < g.rows; ++r)
            for (int c = 0; c < g.cols; ++c)
                for (int dr = -1; dr <= 1; ++dr)
                    for (int dc = -1; dc <= 1; ++dc) {
                        if (dr == 0 && dc == 0) continue;
                        if (!eight && dr != 0 && dc != 0) continue;
                        const int rr = r + dr, cc = c + dc;
                        if (rr < 0 || cc < 0 || rr >= g.rows || cc >= g.cols) continue;
                        const int i = a.at(t, r, c), j = a.at(t, rr, cc);
                        if (i != j && joinable(i, j)) parent[find(i)] = find(j);
                    }
    std::vector<int> low(static_cast<std::size_t>(k), k);
    for (int s = 0; s < k; ++s) low[find(s)] = std::min(low[find(s)], s);
    std::vector<std::uint16_t> out(a.data().size());
    for (std::size_t n = 0; n < out.size(); ++n) out[n] = static_cast<std::uint16_t>(low[find(a.data()[n])]);
    return out;
}

// ---------------------------------------------------------------------------
// Finite differences.

struct GradCheck {
    double max_rel_error = 0.0;
    std::string worst;
    std::size_t checked = 0;
};

/// Central differences for every entry of every parameter (or a strided
/// subset when `stride` > 1) against the gradients already stored in them.
inline GradCheck check_gradients(const nn::ParamList& params, const std::function<double()>& loss, double h = 1e-5,
                                 std::size_t stride = 1) {
    GradCheck out;
    for (const auto& [name, p] : params) {
        for (Eigen::Index i = 0; i < p->value.size(); i += static_cast<Eigen::Index>(stride)) {
            const double saved = p->value.data()[i];
            p->value.data()[i] = saved + h;
            const double up = loss();
            p->value.data()[i] = saved - h;
            const double down = loss();
            p->value.data()[i] = saved;
            const double numeric = (up - down) / (2 * h);
            const double analytic = p->grad.data()[i];
            const double scale = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
            const double rel = std::abs(numeric - analytic) / scale;
            ++out.checked;
            if (rel > out.max_rel_error) {
                out.max_rel_error = rel;
                out.worst = name + "[" + std::to_string(i) + "]";
            }
        }
    }
    return out;
}

}  // namespace vslot::testing
