#pragma once

#include "vslot/common.hpp"

#include <cstdint>
#include <vector>

namespace vslot {

/// Hard patch-to-slot ownership over a T x H' x W' grid.
class AssignmentMap {
public:
    AssignmentMap() = default;
    AssignmentMap(GridShape shape, int num_slots, std::uint16_t fill = 0)
        : shape_(shape), num_slots_(num_slots), owner_(shape.size(), fill) {}

    const GridShape& shape() const { return shape_; }
    int num_slots() const { return num_slots_; }

    std::uint16_t at(int t, int r, int c) const { return owner_[shape_.index(t, r, c)]; }
    std::uint16_t& at(int t, int r, int c) { return owner_[shape_.index(t, r, c)]; }

    const std::vector<std::uint16_t>& data() const { return owner_; }
    std::vector<std::uint16_t>& data() { return owner_; }

    /// Number of patches owned by each slot, summed over all frames.
    std::vector<std::size_t> counts() const {
        std::vector<std::size_t> n(num_slots_, 0);
        for (auto s : owner_) ++n[s];
        return n;
    }

    bool operator==(const AssignmentMap&) const = default;

private:
    GridShape shape_;
    int num_slots_ = 0;
    std::vector<std::uint16_t> owner_;
};

}  // namespace vslot
