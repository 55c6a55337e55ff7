#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace vslot {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

// Error categories surfaced by the library. Everything derives from
// std::runtime_error so callers that do not care can catch one type.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct PipelineError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Shape of a spatio-temporal patch grid (T x H' x W').
struct GridShape {
    int frames = 0;
    int rows = 0;
    int cols = 0;

    std::size_t frame_size() const { return static_cast<std::size_t>(rows) * cols; }
    std::size_t size() const { return frame_size() * frames; }
    std::size_t index(int t, int r, int c) const {
        return (static_cast<std::size_t>(t) * rows + r) * cols + c;
    }
    bool operator==(const GridShape&) const = default;
};

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace vslot
