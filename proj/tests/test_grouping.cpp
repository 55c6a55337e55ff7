#include "doctest.h"
#include "support.hpp"

#include "vslot/grouping.hpp"
#include "vslot/scenes.hpp"

#include <filesystem>
#include <set>

using namespace vslot;
using namespace vslot::testing;

namespace {

GroupingConfig tiny_config(int k = 3, GroupingMode mode = GroupingMode::SpatioTemporal) {
    GroupingConfig c;
    c.num_slots = k;
    c.slot_dim = 8;
    c.feature_dim = 4;
    c.mlp_hidden = 8;
    c.decoder_hidden = 8;
    c.mode = mode;
    return c;
}

FeatureVolume random_volume(Rng& rng, GridShape g, int dim) {
    FeatureVolume v;
    v.shape = g;
    v.patch_size = 8;
    v.features = random_matrix(rng, static_cast<Eigen::Index>(g.size()), dim);
    return v;
}

}  // namespace

TEST_CASE("tokenize shapes and identity case") {
    VideoClip clip;
    clip.frames = 2;
    clip.height = 4;
    clip.width = 4;
    clip.pixels.resize(2 * 4 * 4 * 3);
    for (std::size_t i = 0; i < clip.pixels.size(); ++i) clip.pixels[i] = static_cast<float>(i) / 100.0f;
    const Matrix t2 = tokenize(clip, 2);
    CHECK(t2.rows() == 8);
    CHECK(t2.cols() == 12);
    const Matrix t4 = tokenize(clip, 4);
    REQUIRE(t4.rows() == 2);
    for (int f = 0; f < 2; ++f)
        for (int j = 0; j < 48; ++j) CHECK(t4(f, j) == static_cast<double>(clip.pixels[static_cast<std::size_t>(f * 48 + j)]));
    CHECK_THROWS_AS(tokenize(clip, 3), InputError);
    CHECK(GridShape{8, 224 / 16, 224 / 16}.size() == 1568);
}

TEST_CASE("positional code") {
    const Matrix pe = positional_encoding(8, 14, 14, 48);
    const int per_axis = 8;
    for (int axis = 0; axis < 3; ++axis)
        for (int i = 0; i < per_axis; ++i) {
            CHECK(pe(0, axis * 2 * per_axis + i) == 0.0);
            CHECK(pe(0, axis * 2 * per_axis + per_axis + i) == 1.0);
        }
    std::set<std::vector<double>> codes;
    for (Eigen::Index r = 0; r < pe.rows(); ++r) codes.insert(std::vector<double>(pe.row(r).data(), pe.row(r).data() + pe.cols()));
    CHECK(codes.size() == static_cast<std::size_t>(pe.rows()));
    CHECK(pe == positional_encoding(8, 14, 14, 48));
    CHECK_THROWS_AS(positional_encoding(1, 2, 2, 5), ConfigError);
}

TEST_CASE("slot attention with one token and one slot") {
    Rng rng(1);
    GroupingModel m(tiny_config(1), 3);
    const Matrix tokens = random_matrix(rng, 1, 4);
    const Matrix pe = positional_encoding(1, 1, 1, 8);
    const auto r = m.slot_attention(tokens, pe, Matrix(random_matrix(rng, 1, 8)));
    CHECK(r.attention(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("duplicated tokens get equal attention columns") {
    Rng rng(2);
    GroupingConfig c = tiny_config(3);
    c.input_positions = false;
    GroupingModel m(c, 4);
    Matrix tokens = random_matrix(rng, 5, 4);
    tokens.row(3) = tokens.row(1);
    const auto r = m.slot_attention(tokens, positional_encoding(1, 1, 5, 8), Matrix(random_matrix(rng, 3, 8)));
    for (int k = 0; k < 3; ++k) CHECK(r.attention(k, 3) == doctest::Approx(r.attention(k, 1)).epsilon(1e-12));
}

TEST_CASE("decoder alpha for identical slots and a constant network") {
    Rng rng(5);
    GroupingModel m(tiny_config(2), 6);
    const Matrix pe = positional_encoding(1, 2, 2, 8);
    Matrix slots(2, 8);
    slots.row(0) = random_matrix(rng, 1, 8).row(0);
    slots.row(1) = slots.row(0);
    const auto d = m.decode_slots(slots, pe);
    for (Eigen::Index n = 0; n < d.alpha.cols(); ++n) CHECK(d.alpha(0, n) == doctest::Approx(0.5).epsilon(1e-12));

    m.decoder_out.weight.value.setZero();
    m.decoder_out.bias.value.setRandom();
    const auto z = m.decode_slots(random_matrix(rng, 2, 8), pe);
    for (Eigen::Index row = 0; row < z.recon.rows(); ++row)
        for (Eigen::Index j = 0; j < 4; ++j) CHECK(z.recon(row, j) == m.decoder_out.bias.value(0, j));
    for (Eigen::Index n = 0; n < z.alpha.cols(); ++n) CHECK(z.alpha(0, n) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("reconstruction loss closed forms") {
    Rng rng(7);
    const Matrix target = random_matrix(rng, 6, 3);
    Matrix alpha = Matrix::Constant(1, 6, 1.0);
    CHECK(reconstruction_loss(target, alpha, target) == 0.0);
    Matrix shifted = target;
    shifted.col(0).array() += 2.0;
    shifted.col(2).array() -= 1.0;
    CHECK(reconstruction_loss(shifted, alpha, target) == doctest::Approx(5.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("reconstruction loss matches a double loop") {
    Rng rng(8);
    const int k = 2, n = 8, d = 3;  // a 2x2x2 grid
    const Matrix recon = random_matrix(rng, k * n, d + 1);
    const Matrix alpha = nn::softmax_rows(random_matrix(rng, n, k)).transpose();
    const Matrix target = random_matrix(rng, n, d);
    double acc = 0.0;
    for (int p = 0; p < n; ++p)
        for (int c = 0; c < d; ++c) {
            double mix = 0.0;
            for (int s = 0; s < k; ++s) mix += alpha(s, p) * recon(s * n + p, c);
            acc += (mix - target(p, c)) * (mix - target(p, c));
        }
    CHECK(std::abs(reconstruction_loss(recon, alpha, target) - acc / (n * d)) < 1e-6);
}

TEST_CASE("assign_patches argmax and ties") {
    Matrix alpha = Matrix::Zero(6, 3);
    alpha(4, 0) = 1.0;
    alpha(2, 1) = 0.4;
    alpha(5, 1) = 0.4;
    alpha(0, 1) = 0.2;
    alpha.col(2).setConstant(1.0 / 6);
    const auto a = assign_patches(alpha, {1, 1, 3});
    CHECK(a.data()[0] == 4);
    CHECK(a.data()[1] == 2);
    CHECK(a.data()[2] == 0);

    Rng rng(9);
    const Matrix r = random_matrix(rng, 4, 50);
    const auto b = assign_patches(r, {2, 5, 5});
    for (int n = 0; n < 50; ++n) {
        int best = 0;
        for (int s = 0; s < 4; ++s)
            if (r(s, n) > r(best, n)) best = s;
        CHECK(b.data()[static_cast<std::size_t>(n)] == best);
    }
}

TEST_CASE("alpha is a single shared mask per slot across frames") {
    Rng rng(10);
    GroupingModel m(tiny_config(3), 11);
    const auto v = random_volume(rng, {3, 2, 2}, 4);
    const SlotSet s = m.forward(v, 12);
    CHECK(s.alpha.rows() == 3);
    CHECK(s.alpha.cols() == 12);
    CHECK(s.slots.rows() == 3);
    const RowVector sums = s.alpha.colwise().sum();
    for (Eigen::Index n = 0; n < sums.size(); ++n) CHECK(std::abs(sums(n) - 1.0) <= 1e-5);
}

TEST_CASE("per-frame mode ignores the other frames") {
    Rng rng(13);
    GroupingModel m(tiny_config(3, GroupingMode::PerFrame), 14);
    auto v = random_volume(rng, {3, 2, 2}, 4);
    const Matrix noise = m.sample_noise(v.shape, 15);
    const SlotSet a = m.forward(v, noise);
    v.features.middleRows(8, 4) = random_matrix(rng, 4, 4);  // frame 2
    const SlotSet b = m.forward(v, noise);
    CHECK(a.alpha.leftCols(8) == b.alpha.leftCols(8));
    CHECK(a.slots.topRows(6) == b.slots.topRows(6));
    CHECK(a.alpha.rightCols(4) != b.alpha.rightCols(4));
}

TEST_CASE("reconstruction gradients match finite differences") {
    for (auto mode : {GroupingMode::SpatioTemporal, GroupingMode::PerFrame})
        for (auto backend : {kernels::Backend::Serial, kernels::Backend::Parallel}) {
            CAPTURE(grouping_mode_name(mode));
            CAPTURE(kernels::backend_name(backend));
            Rng rng(17);
            GroupingModel m(tiny_config(3, mode), 18);
            m.backend = backend;
            const auto params = m.params();
            for (const auto& [name, p] : params) p->value += random_matrix(rng, p->value.rows(), p->value.cols(), 0.05);
            const auto v = random_volume(rng, {2, 4, 4}, 4);
            const Matrix noise = m.sample_noise(v.shape, 19);
            nn::zero_grads(params);
            m.loss_and_grad(v, noise, 1.0);
            const auto r = check_gradients(params, [&] { return m.loss(v, noise); });
            CAPTURE(r.worst);
            CHECK(r.max_rel_error <= 1e-4);
        }
}

TEST_CASE("training is deterministic and checkpoints round-trip") {
    Rng rng(21);
    std::vector<FeatureVolume> data;
    for (int i = 0; i < 3; ++i) data.push_back(random_volume(rng, {2, 2, 2}, 4));
    GroupingTrainConfig tc;
    tc.steps = 4;
    tc.batch_size = 2;
    tc.seed = 5;
    GroupingModel a(tiny_config(), 1), b(tiny_config(), 1);
    const auto la = train_grouping(data, a, tc);
    const auto lb = train_grouping(data, b, tc);
    CHECK(la.loss == lb.loss);
    CHECK(la.loss.size() == 4);

    const auto dir = std::filesystem::temp_directory_path() / "vslot_test_grouping_ckpt";
    std::filesystem::remove_all(dir);
    save_grouping(a, dir, 1, 4);
    GroupingModel loaded = load_grouping(dir);
    const Matrix noise = a.sample_noise(data[0].shape, 3);
    CHECK(loaded.loss(data[0], noise) == a.loss(data[0], noise));
    std::filesystem::remove_all(dir);
}

TEST_CASE("non-finite features are rejected") {
    Rng rng(23);
    GroupingModel m(tiny_config(), 1);
    auto v = random_volume(rng, {1, 2, 2}, 4);
    v.features(0, 0) = std::nan("");
    CHECK_THROWS_AS(m.forward(v, 1), NumericError);
    auto w = random_volume(rng, {1, 2, 2}, 5);
    CHECK_THROWS_AS(m.forward(w, 1), InputError);
}

TEST_CASE("permuting the initial slots permutes the outputs") {
    Rng rng(25);
    for (int trial = 0; trial < 20; ++trial) {
        const int k = uniform_int(rng, 2, 5);
        const auto mode = trial % 2 ? GroupingMode::PerFrame : GroupingMode::SpatioTemporal;
        GroupingModel m(tiny_config(k, mode), static_cast<std::uint64_t>(trial));
        const auto v = random_volume(rng, {2, 3, 3}, 4);
        const Matrix noise = m.sample_noise(v.shape, 26);
        std::vector<int> perm(static_cast<std::size_t>(k));
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        Matrix permuted(noise.rows(), noise.cols());
        const Eigen::Index segments = noise.rows() / k;
        for (Eigen::Index s = 0; s < segments; ++s)
            for (int i = 0; i < k; ++i) permuted.row(s * k + i) = noise.row(s * k + perm[static_cast<std::size_t>(i)]);
        const SlotSet a = m.forward(v, noise), b = m.forward(v, permuted);
        for (int i = 0; i < k; ++i)
            CHECK((b.alpha.row(i) - a.alpha.row(perm[static_cast<std::size_t>(i)])).cwiseAbs().maxCoeff() <= 1e-5);
    }
}
