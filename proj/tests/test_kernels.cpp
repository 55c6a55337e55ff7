#include "doctest.h"
#include "support.hpp"

#include "vslot/kernels.hpp"

using namespace vslot;
using namespace vslot::testing;
using kernels::Backend;

TEST_CASE("backend names round-trip") {
    for (auto b : {Backend::Serial, Backend::Parallel}) CHECK(kernels::backend_from_name(kernels::backend_name(b)) == b);
    CHECK_THROWS_AS(kernels::backend_from_name("gpu"), ConfigError);
    CHECK(kernels::parallel_threads() >= 1);
}

TEST_CASE("parallel kernels agree with the serial reference") {
    Rng rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        const int k = uniform_int(rng, 1, 6), n = uniform_int(rng, 1, 40), h = uniform_int(rng, 1, 12),
                  o = uniform_int(rng, 1, 9);
        const Matrix slot_proj = random_matrix(rng, k, h), pos_proj = random_matrix(rng, n, h);
        const Matrix weight = random_matrix(rng, o, h);
        const RowVector bias = random_matrix(rng, 1, o).row(0);

        Matrix pre_s, out_s, pre_p, out_p;
        kernels::broadcast_mlp_forward(slot_proj, pos_proj, weight, bias, pre_s, out_s, Backend::Serial);
        kernels::broadcast_mlp_forward(slot_proj, pos_proj, weight, bias, pre_p, out_p, Backend::Parallel);
        CHECK(pre_s == pre_p);
        CHECK((out_s - out_p).cwiseAbs().maxCoeff() <= 1e-12);
        for (int s = 0; s < k; ++s)
            for (int p = 0; p < n; ++p)
                for (int j = 0; j < h; ++j) CHECK(pre_s(s * n + p, j) == slot_proj(s, j) + pos_proj(p, j));

        const Matrix dout = random_matrix(rng, k * n, o);
        Matrix wg_s = Matrix::Zero(o, h), wg_p = Matrix::Zero(o, h), sg_s, sg_p, pg_s, pg_p;
        RowVector bg_s = RowVector::Zero(o), bg_p = RowVector::Zero(o);
        kernels::broadcast_mlp_backward(pre_s, weight, dout, k, wg_s, bg_s, sg_s, pg_s, Backend::Serial);
        kernels::broadcast_mlp_backward(pre_s, weight, dout, k, wg_p, bg_p, sg_p, pg_p, Backend::Parallel);
        CHECK((wg_s - wg_p).cwiseAbs().maxCoeff() <= 1e-10);
        CHECK((bg_s - bg_p).cwiseAbs().maxCoeff() <= 1e-10);
        CHECK((sg_s - sg_p).cwiseAbs().maxCoeff() <= 1e-10);
        CHECK((pg_s - pg_p).cwiseAbs().maxCoeff() <= 1e-10);

        const Matrix keys = random_matrix(rng, n, h), queries = random_matrix(rng, k, h);
        const Matrix ls = kernels::attention_logits(keys, queries, 0.5, Backend::Serial);
        const Matrix lp = kernels::attention_logits(keys, queries, 0.5, Backend::Parallel);
        CHECK((ls - lp).cwiseAbs().maxCoeff() <= 1e-12);
        CHECK((ls - 0.5 * keys * queries.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
    }
}

TEST_CASE("parallel backward is deterministic") {
    Rng rng(2);
    const Matrix slot_proj = random_matrix(rng, 4, 8), pos_proj = random_matrix(rng, 30, 8);
    const Matrix weight = random_matrix(rng, 5, 8);
    const RowVector bias = RowVector::Zero(5);
    Matrix pre, out;
    kernels::broadcast_mlp_forward(slot_proj, pos_proj, weight, bias, pre, out, Backend::Parallel);
    const Matrix dout = random_matrix(rng, 120, 5);
    Matrix w1 = Matrix::Zero(5, 8), w2 = Matrix::Zero(5, 8), s1, s2, p1, p2;
    RowVector b1 = RowVector::Zero(5), b2 = RowVector::Zero(5);
    kernels::broadcast_mlp_backward(pre, weight, dout, 4, w1, b1, s1, p1, Backend::Parallel);
    kernels::broadcast_mlp_backward(pre, weight, dout, 4, w2, b2, s2, p2, Backend::Parallel);
    CHECK(w1 == w2);
    CHECK(p1 == p2);
}
