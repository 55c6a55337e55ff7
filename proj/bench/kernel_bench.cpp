// Serial reference vs OpenMP kernels on decoder-sized problems.
#include "vslot/kernels.hpp"

#include <benchmark/benchmark.h>

using namespace vslot;
using kernels::Backend;

namespace {

struct Problem {
    Matrix slot_proj, pos_proj, weight, dout, keys, queries;
    RowVector bias;

    Problem(int k, int n, int h, int o) {
        slot_proj = Matrix::Random(k, h);
        pos_proj = Matrix::Random(n, h);
        weight = Matrix::Random(o, h);
        bias = RowVector::Random(o);
        dout = Matrix::Random(k * n, o);
        keys = Matrix::Random(n, h);
        queries = Matrix::Random(k, h);
    }
};

Backend backend_arg(const benchmark::State& state) { return state.range(1) ? Backend::Parallel : Backend::Serial; }

void BM_DecoderForward(benchmark::State& state) {
    const Problem p(5, static_cast<int>(state.range(0)), 64, 33);
    Matrix pre, out;
    for (auto _ : state) {
        kernels::broadcast_mlp_forward(p.slot_proj, p.pos_proj, p.weight, p.bias, pre, out, backend_arg(state));
        benchmark::DoNotOptimize(out.data());
    }
    state.SetLabel(kernels::backend_name(backend_arg(state)));
}

void BM_DecoderBackward(benchmark::State& state) {
    const Problem p(5, static_cast<int>(state.range(0)), 64, 33);
    Matrix pre, out;
    kernels::broadcast_mlp_forward(p.slot_proj, p.pos_proj, p.weight, p.bias, pre, out, Backend::Serial);
    Matrix wg = Matrix::Zero(33, 64), sg, pg;
    RowVector bg = RowVector::Zero(33);
    for (auto _ : state) {
        kernels::broadcast_mlp_backward(pre, p.weight, p.dout, 5, wg, bg, sg, pg, backend_arg(state));
        benchmark::DoNotOptimize(wg.data());
    }
    state.SetLabel(kernels::backend_name(backend_arg(state)));
}

void BM_AttentionLogits(benchmark::State& state) {
    const Problem p(5, static_cast<int>(state.range(0)), 64, 33);
    for (auto _ : state) {
        Matrix l = kernels::attention_logits(p.keys, p.queries, 0.125, backend_arg(state));
        benchmark::DoNotOptimize(l.data());
    }
    state.SetLabel(kernels::backend_name(backend_arg(state)));
}

}  // namespace

BENCHMARK(BM_DecoderForward)->ArgsProduct({{128, 512, 2048}, {0, 1}});
BENCHMARK(BM_DecoderBackward)->ArgsProduct({{128, 512, 2048}, {0, 1}});
BENCHMARK(BM_AttentionLogits)->ArgsProduct({{128, 512, 2048}, {0, 1}});

BENCHMARK_MAIN();
