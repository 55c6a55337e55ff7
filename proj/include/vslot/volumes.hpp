#pragma once

#include "vslot/common.hpp"

namespace vslot {

/// Frozen-backbone features over a patch grid; one row per (t, h, w) in
/// row-major grid order.
struct FeatureVolume {
    GridShape shape;
    int patch_size = 0;
    Matrix features;  // shape.size() x D

    int dim() const { return static_cast<int>(features.cols()); }
};

/// Per-patch semantic features, produced frame by frame and stacked.
struct SemanticVolume {
    GridShape shape;
    Matrix features;  // shape.size() x D_sem

    int dim() const { return static_cast<int>(features.cols()); }
};

}  // namespace vslot
