#pragma once

// Minimal dense layers with hand-written reverse passes. Every layer keeps
// its parameters and their accumulated gradients side by side; forward
// passes return a cache that the matching backward consumes.

#include "vslot/common.hpp"

#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace vslot::nn {

struct Param {
    Matrix value;
    Matrix grad;

    void resize(Eigen::Index rows, Eigen::Index cols) {
        value = Matrix::Zero(rows, cols);
        grad = Matrix::Zero(rows, cols);
    }
    void zero_grad() { grad.setZero(); }
};

/// Ordered, named view over a model's parameters.
using ParamList = std::vector<std::pair<std::string, Param*>>;

void zero_grads(const ParamList& params);
double grad_norm(const ParamList& params);
/// Rescales gradients so the global L2 norm is at most max_norm; returns the
/// norm before clipping.
double clip_grad_norm(const ParamList& params, double max_norm);
std::size_t parameter_count(const ParamList& params);
/// Rounds every parameter to the nearest 32-bit float.
void snap_to_float(const ParamList& params);

/// y = x W^T + b, W is out x in.
struct Linear {
    Param weight;
    Param bias;
    bool has_bias = true;

    Linear() = default;
    Linear(int in, int out, bool with_bias = true);
    void init(std::mt19937_64& rng);
    int in_dim() const { return static_cast<int>(weight.value.cols()); }
    int out_dim() const { return static_cast<int>(weight.value.rows()); }

    Matrix forward(const Matrix& x) const;
    /// Accumulates parameter gradients and returns dL/dx.
    Matrix backward(const Matrix& x, const Matrix& dy);
    void collect(const std::string& prefix, ParamList& out);
};

/// Row-wise layer normalization with learned scale and shift.
struct LayerNorm {
    Param gamma;
    Param beta;
    double eps = 1e-5;

    struct Cache {
        Matrix xhat;
        Vector inv_std;
    };

    LayerNorm() = default;
    explicit LayerNorm(int dim);
    Matrix forward(const Matrix& x, Cache& cache) const;
    Matrix backward(const Cache& cache, const Matrix& dy);
    void collect(const std::string& prefix, ParamList& out);
};

/// Gated recurrent cell, gate order (reset, update, new) as in common
/// deep-learning frameworks.
struct GRUCell {
    Linear input;   // in -> 3H
    Linear hidden;  // H -> 3H

    struct Cache {
        Matrix x, h, r, z, n, hn;  // hn: hidden-path pre-activation of the new gate
    };

    GRUCell() = default;
    GRUCell(int in, int hidden_dim);
    void init(std::mt19937_64& rng);
    int hidden_dim() const { return hidden.in_dim(); }
    Matrix forward(const Matrix& x, const Matrix& h, Cache& cache) const;
    /// Returns (dL/dx, dL/dh).
    std::pair<Matrix, Matrix> backward(const Cache& cache, const Matrix& dh_next);
    void collect(const std::string& prefix, ParamList& out);
};

Matrix relu(const Matrix& x);
Matrix relu_backward(const Matrix& pre, const Matrix& dy);

/// Softmax along each row.
Matrix softmax_rows(const Matrix& x);
/// Given y = softmax_rows(x) and dL/dy, returns dL/dx.
Matrix softmax_rows_backward(const Matrix& y, const Matrix& dy);

}  // namespace vslot::nn
