#include "doctest.h"
#include "support.hpp"

#include "vslot/adapter.hpp"

#include <cstring>
#include <filesystem>

using namespace vslot;
using namespace vslot::testing;

namespace {

AdapterConfig small_config(int dim = 8) {
    AdapterConfig c;
    c.dim = dim;
    c.heads = 4;
    c.ffn_hidden = 16;
    return c;
}

AdapterBatch random_batch(Rng& rng, int k, int m, int d) {
    AdapterBatch b;
    for (int i = 0; i < k; ++i) b.patches.push_back(random_matrix(rng, m, d));
    b.summary = random_matrix(rng, k, d);
    return b;
}

}  // namespace

TEST_CASE("readout keeps the token shape and is deterministic") {
    Rng rng(1);
    AdapterModel m(small_config(), 2);
    const Matrix x = random_matrix(rng, 5, 8);
    const Matrix y = m.readout(x);
    CHECK(y.rows() == 5);
    CHECK(y.cols() == 8);
    CHECK(m.readout(x) == y);
}

TEST_CASE("cross-attention pooling") {
    Rng rng(3);
    SUBCASE("single patch") {
        const Matrix p = random_matrix(rng, 1, 4);
        const Vector pooled = cross_attention_pool(p, Vector::Random(4));
        CHECK((pooled - p.row(0).transpose()).norm() < 1e-12);
    }
    SUBCASE("orthogonal query gives the mean") {
        Matrix p(3, 2);
        p << 1, 0, 2, 0, -4, 0;
        Vector cls(2);
        cls << 0, 1;
        const Vector pooled = cross_attention_pool(p, cls);
        CHECK(pooled(0) == doctest::Approx(-1.0 / 3.0).epsilon(1e-12));
    }
    SUBCASE("scores 4 and 0") {
        Matrix p(2, 2);
        p << 4, 0, 0, 1;
        Vector cls(2);
        cls << 1, 0;
        Vector w;
        const Vector pooled = cross_attention_pool(p, cls, &w);
        const double w0 = 1.0 / (1.0 + std::exp(-4.0));
        CHECK(w(0) == doctest::Approx(w0).epsilon(1e-12));
        CHECK(w(0) == doctest::Approx(0.9820).epsilon(1e-4));
        CHECK(w(1) == doctest::Approx(0.0180).epsilon(1e-2));
        CHECK(pooled(0) == doctest::Approx(4 * w0).epsilon(1e-12));
    }
    SUBCASE("weights are a convex combination") {
        for (int trial = 0; trial < 100; ++trial) {
            const Matrix p = random_matrix(rng, uniform_int(rng, 1, 6), 4);
            Vector w;
            cross_attention_pool(p, random_matrix(rng, 4, 1, 3.0).col(0), &w);
            CHECK(w.minCoeff() >= 0.0);
            CHECK(std::abs(w.sum() - 1.0) <= 1e-6);
        }
    }
}

TEST_CASE("similarity matrix") {
    Rng rng(5);
    const Matrix a = random_matrix(rng, 4, 3);
    CHECK((similarity_matrix(a, a).diagonal().array() - 1.0).abs().maxCoeff() < 1e-12);
    const Matrix id = Matrix::Identity(3, 3);
    const Matrix s = similarity_matrix(id, id);
    CHECK((s - id).norm() == 0.0);
    const Matrix b = random_matrix(rng, 4, 3);
    const Matrix phi = similarity_matrix(a, b);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
            double dot = 0, na = 0, nb = 0;
            for (int d = 0; d < 3; ++d) {
                dot += a(i, d) * b(j, d);
                na += a(i, d) * a(i, d);
                nb += b(j, d) * b(j, d);
            }
            CHECK(std::abs(phi(i, j) - dot / std::sqrt(na * nb)) < 1e-6);
            CHECK(std::abs(phi(i, j)) <= 1.0 + 1e-6);
        }
    Matrix z = a;
    z.row(2).setZero();
    CHECK_THROWS_AS(similarity_matrix(z, b), NumericError);
}

TEST_CASE("info_nce closed forms") {
    CHECK(info_nce(Matrix::Constant(1, 1, 0.3)) == 0.0);
    CHECK(std::abs(info_nce(Matrix::Identity(2, 2)) - std::log(1.0 + std::exp(-1.0))) <= 1e-9);
    CHECK(std::abs(info_nce(Matrix::Constant(5, 5, 0.7)) - std::log(5.0)) <= 1e-9);
}

TEST_CASE("adapter objective gradients match finite differences") {
    Rng rng(7);
    AdapterModel m(small_config(8), 9);
    const auto params = m.params();
    const AdapterBatch batch = random_batch(rng, 3, 4, 8);
    nn::zero_grads(params);
    adapter_objective_and_grad(m, batch);
    const auto r = check_gradients(params, [&] { return adapter_objective(m, batch); });
    CAPTURE(r.worst);
    CHECK(r.max_rel_error <= 1e-4);
}

TEST_CASE("training leaves the teacher untouched and is deterministic") {
    OracleSemanticTeacher teacher = make_semantic_teacher({"a", "b", "c"}, {"sky"}, 8, 0.05, 3);
    const Matrix centers = teacher.centers, rotation = teacher.rotation;
    SceneConfig sc;
    sc.num_frames = 1;
    sc.height = sc.width = 32;
    sc.class_catalog = {"a", "b", "c"};
    sc.num_objects = 1;
    auto stream_for = [&](std::uint64_t seed) {
        auto rng = std::make_shared<Rng>(seed);
        return FrameStream([rng, sc, &teacher]() mutable {
            sc.seed = (*rng)();
            const Scene s = generate_scene(sc);
            return oracle_semantics(s.truth, 0, teacher, sc.seed);
        });
    };
    AdapterTrainConfig tc;
    tc.steps = 3;
    tc.batch_size = 4;
    AdapterModel a(small_config(8), 1), b(small_config(8), 1);
    const auto la = train_adapter(stream_for(4), a, tc);
    const auto lb = train_adapter(stream_for(4), b, tc);
    CHECK(la.loss == lb.loss);
    CHECK(std::memcmp(centers.data(), teacher.centers.data(), sizeof(double) * centers.size()) == 0);
    CHECK(std::memcmp(rotation.data(), teacher.rotation.data(), sizeof(double) * rotation.size()) == 0);

    const auto dir = std::filesystem::temp_directory_path() / "vslot_test_adapter_ckpt";
    std::filesystem::remove_all(dir);
    save_adapter(a, dir, 1, 3);
    const AdapterModel loaded = load_adapter(dir);
    Rng rng(11);
    const AdapterBatch batch = random_batch(rng, 4, 16, 8);
    CHECK(adapter_objective(loaded, batch) == adapter_objective(a, batch));
    std::filesystem::remove_all(dir);
}
