#include "vslot/kernels.hpp"

#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace vslot::kernels {

std::string backend_name(Backend b) { return b == Backend::Serial ? "serial" : "parallel"; }

Backend backend_from_name(const std::string& name) {
    if (name == "serial") return Backend::Serial;
    if (name == "parallel") return Backend::Parallel;
    throw ConfigError("unknown kernel backend '" + name + "'");
}

int parallel_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

namespace {

void check_forward_shapes(const Matrix& slot_proj, const Matrix& pos_proj, const Matrix& weight,
                          const RowVector& bias) {
    if (slot_proj.cols() != pos_proj.cols() || weight.cols() != slot_proj.cols() || bias.size() != weight.rows())
        throw InputError("broadcast_mlp_forward: inconsistent shapes");
}

void forward_serial(const Matrix& slot_proj, const Matrix& pos_proj, const Matrix& weight, const RowVector& bias,
                    Matrix& pre, Matrix& out) {
    const auto k_n = slot_proj.rows(), n_n = pos_proj.rows(), h_n = weight.cols(), o_n = weight.rows();
    for (Eigen::Index k = 0; k < k_n; ++k) {
        for (Eigen::Index n = 0; n < n_n; ++n) {
            const Eigen::Index row = k * n_n + n;
            for (Eigen::Index h = 0; h < h_n; ++h) pre(row, h) = slot_proj(k, h) + pos_proj(n, h);
            for (Eigen::Index o = 0; o < o_n; ++o) {
                double acc = bias(o);
                for (Eigen::Index h = 0; h < h_n; ++h) {
                    const double a = pre(row, h);
                    if (a > 0.0) acc += a * weight(o, h);
                }
                out(row, o) = acc;
            }
        }
    }
}

void forward_parallel(const Matrix& slot_proj, const Matrix& pos_proj, const Matrix& weight,
                      const RowVector& bias, Matrix& pre, Matrix& out) {
    const auto k_n = slot_proj.rows(), n_n = pos_proj.rows();
    const Matrix wt = weight.transpose();
#pragma omp parallel for schedule(static)
    for (Eigen::Index k = 0; k < k_n; ++k) {
        auto pre_k = pre.middleRows(k * n_n, n_n);
        pre_k = pos_proj.rowwise() + slot_proj.row(k);
        auto out_k = out.middleRows(k * n_n, n_n);
        out_k.noalias() = pre_k.cwiseMax(0.0) * wt;
        out_k.rowwise() += bias;
    }
}

void backward_serial(const Matrix& pre, const Matrix& weight, const Matrix& dout, int num_slots,
                     Matrix& weight_grad, RowVector& bias_grad, Matrix& slot_grad, Matrix& pos_grad) {
    const Eigen::Index n_n = pre.rows() / num_slots, h_n = weight.cols(), o_n = weight.rows();
    for (Eigen::Index row = 0; row < pre.rows(); ++row) {
        const Eigen::Index k = row / n_n, n = row % n_n;
        for (Eigen::Index o = 0; o < o_n; ++o) {
            const double g = dout(row, o);
            bias_grad(o) += g;
            for (Eigen::Index h = 0; h < h_n; ++h) {
                const double a = pre(row, h);
                if (a > 0.0) weight_grad(o, h) += g * a;
            }
        }
        for (Eigen::Index h = 0; h < h_n; ++h) {
            if (pre(row, h) <= 0.0) continue;
            double acc = 0.0;
            for (Eigen::Index o = 0; o < o_n; ++o) acc += dout(row, o) * weight(o, h);
            slot_grad(k, h) += acc;
            pos_grad(n, h) += acc;
        }
    }
}

void backward_parallel(const Matrix& pre, const Matrix& weight, const Matrix& dout, int num_slots,
                       Matrix& weight_grad, RowVector& bias_grad, Matrix& slot_grad, Matrix& pos_grad) {
    const Eigen::Index n_n = pre.rows() / num_slots;
    // Per-slot partial sums, reduced afterwards in slot order so the result
    // does not depend on the thread count.
    std::vector<Matrix> partial_w(num_slots);
    std::vector<Matrix> partial_pos(num_slots);
#pragma omp parallel for schedule(static)
    for (int k = 0; k < num_slots; ++k) {
        const auto pre_k = pre.middleRows(k * n_n, n_n);
        const auto dout_k = dout.middleRows(k * n_n, n_n);
        const Matrix act = pre_k.cwiseMax(0.0);
        partial_w[k].noalias() = dout_k.transpose() * act;
        Matrix dh = dout_k * weight;
        dh = (pre_k.array() > 0.0).select(dh, 0.0);
        slot_grad.row(k) = dh.colwise().sum();
        partial_pos[k] = std::move(dh);
    }
    for (int k = 0; k < num_slots; ++k) {
        weight_grad += partial_w[k];
        pos_grad += partial_pos[k];
    }
    bias_grad += dout.colwise().sum();
}

}  // namespace

void broadcast_mlp_forward(const Matrix& slot_proj, const Matrix& pos_proj, const Matrix& weight,
                           const RowVector& bias, Matrix& pre, Matrix& out, Backend backend) {
    check_forward_shapes(slot_proj, pos_proj, weight, bias);
    const auto rows = slot_proj.rows() * pos_proj.rows();
    pre.resize(rows, weight.cols());
    out.resize(rows, weight.rows());
    if (backend == Backend::Serial)
        forward_serial(slot_proj, pos_proj, weight, bias, pre, out);
    else
        forward_parallel(slot_proj, pos_proj, weight, bias, pre, out);
}

void broadcast_mlp_backward(const Matrix& pre, const Matrix& weight, const Matrix& dout, int num_slots,
                            Matrix& weight_grad, RowVector& bias_grad, Matrix& slot_grad, Matrix& pos_grad,
                            Backend backend) {
    if (num_slots < 1 || pre.rows() % num_slots != 0 || dout.rows() != pre.rows() || dout.cols() != weight.rows())
        throw InputError("broadcast_mlp_backward: inconsistent shapes");
    slot_grad = Matrix::Zero(num_slots, pre.cols());
    pos_grad = Matrix::Zero(pre.rows() / num_slots, pre.cols());
    if (backend == Backend::Serial)
        backward_serial(pre, weight, dout, num_slots, weight_grad, bias_grad, slot_grad, pos_grad);
    else
        backward_parallel(pre, weight, dout, num_slots, weight_grad, bias_grad, slot_grad, pos_grad);
}

Matrix attention_logits(const Matrix& keys, const Matrix& queries, double scale, Backend backend) {
    if (keys.cols() != queries.cols()) throw InputError("attention_logits: key/query width mismatch");
    Matrix out(keys.rows(), queries.rows());
    if (backend == Backend::Serial) {
        for (Eigen::Index n = 0; n < keys.rows(); ++n)
            for (Eigen::Index k = 0; k < queries.rows(); ++k) {
                double acc = 0.0;
                for (Eigen::Index d = 0; d < keys.cols(); ++d) acc += keys(n, d) * queries(k, d);
                out(n, k) = acc * scale;
            }
        return out;
    }
    const Matrix qt = queries.transpose();
    const Eigen::Index rows = keys.rows();
    const Eigen::Index block = 256;
#pragma omp parallel for schedule(static)
    for (Eigen::Index start = 0; start < rows; start += block) {
        const Eigen::Index len = std::min(block, rows - start);
        out.middleRows(start, len).noalias() = keys.middleRows(start, len) * qt;
        out.middleRows(start, len) *= scale;
    }
    return out;
}

}  // namespace vslot::kernels
