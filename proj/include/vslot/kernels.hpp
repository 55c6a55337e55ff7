#pragma once

// Hot loops of the broadcast decoder. Each kernel has a plain serial
// reference and an OpenMP-parallel variant; both produce identical results
// up to floating-point summation order inside a single dot product.

#include "vslot/common.hpp"

#include <string>

namespace vslot::kernels {

enum class Backend { Serial, Parallel };

std::string backend_name(Backend b);
Backend backend_from_name(const std::string& name);

/// Number of threads the parallel backend will use.
int parallel_threads();

/// Broadcast first layer plus second layer of the decoder MLP.
///   pre(k*N + n, :) = slot_proj(k, :) + pos_proj(n, :)
///   out(k*N + n, :) = relu(pre(k*N + n, :)) * weight^T + bias
/// slot_proj is K x H, pos_proj is N x H, weight is O x H.
void broadcast_mlp_forward(const Matrix& slot_proj, const Matrix& pos_proj, const Matrix& weight,
                           const RowVector& bias, Matrix& pre, Matrix& out, Backend backend);

/// Reverse pass of broadcast_mlp_forward. Adds into weight_grad and
/// bias_grad; overwrites slot_grad (K x H) and pos_grad (N x H).
void broadcast_mlp_backward(const Matrix& pre, const Matrix& weight, const Matrix& dout, int num_slots,
                            Matrix& weight_grad, RowVector& bias_grad, Matrix& slot_grad, Matrix& pos_grad,
                            Backend backend);

/// Dot-product attention logits scaled by `scale`: keys (N x D) against
/// queries (K x D), giving N x K.
Matrix attention_logits(const Matrix& keys, const Matrix& queries, double scale, Backend backend);

}  // namespace vslot::kernels
