#include "vslot/grouping.hpp"

#include "vslot/archive.hpp"
#include "vslot/optim.hpp"

#include <cmath>
#include <numbers>

namespace vslot {

std::string grouping_mode_name(GroupingMode m) {
    return m == GroupingMode::SpatioTemporal ? "spatiotemporal" : "per_frame";
}

GroupingMode grouping_mode_from_name(const std::string& name) {
    if (name == "spatiotemporal") return GroupingMode::SpatioTemporal;
    if (name == "per_frame") return GroupingMode::PerFrame;
    throw ConfigError("unknown grouping mode '" + name + "'");
}

Matrix tokenize(const VideoClip& clip, int patch_size) {
    if (patch_size < 1 || clip.frames < 1 || clip.height % patch_size != 0 || clip.width % patch_size != 0)
        throw InputError("frame size " + std::to_string(clip.height) + "x" + std::to_string(clip.width) +
                         " is not a multiple of patch size " + std::to_string(patch_size));
    const int rows = clip.height / patch_size, cols = clip.width / patch_size;
    Matrix tokens(static_cast<Eigen::Index>(clip.frames) * rows * cols, 3 * patch_size * patch_size);
    Eigen::Index row = 0;
    for (int t = 0; t < clip.frames; ++t)
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c, ++row) {
                Eigen::Index col = 0;
                for (int y = 0; y < patch_size; ++y)
                    for (int x = 0; x < patch_size; ++x)
                        for (int ch = 0; ch < 3; ++ch)
                            tokens(row, col++) = clip.at(t, r * patch_size + y, c * patch_size + x, ch);
            }
    return tokens;
}

Matrix positional_encoding(int frames, int rows, int cols, int dim) {
    if (frames < 1 || rows < 1 || cols < 1) throw InputError("positional_encoding: empty grid");
    if (dim < 6) throw ConfigError("positional code needs at least 6 channels");
    const int per_axis = dim / 6;
    const int extent[3] = {frames, rows, cols};
    Matrix pe = Matrix::Zero(static_cast<Eigen::Index>(frames) * rows * cols, dim);
    Eigen::Index row = 0;
    for (int t = 0; t < frames; ++t)
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c, ++row) {
                const int pos[3] = {t, r, c};
                for (int axis = 0; axis < 3; ++axis) {
                    const int base = axis * 2 * per_axis;
                    for (int i = 0; i < per_axis; ++i) {
                        const double freq = std::numbers::pi * (i + 1) / (2.0 * extent[axis]);
                        pe(row, base + i) = std::sin(pos[axis] * freq);
                        pe(row, base + per_axis + i) = std::cos(pos[axis] * freq);
                    }
                }
            }
    return pe;
}

void GroupingConfig::validate() const {
    if (num_slots < 1 || num_slots > 65535) throw ConfigError("num_slots must be in [1, 65535]");
    if (slot_dim < 6) throw ConfigError("slot_dim must be at least 6");
    if (feature_dim < 1) throw ConfigError("feature_dim must be positive");
    if (iterations < 1) throw ConfigError("iterations must be positive");
    if (mlp_hidden < 1 || decoder_hidden < 1) throw ConfigError("hidden sizes must be positive");
    if (!(epsilon >= 0.0)) throw ConfigError("epsilon must be non-negative");
}

AssignmentMap assign_patches(const Matrix& alpha, const GridShape& grid) {
    if (alpha.cols() != static_cast<Eigen::Index>(grid.size()))
        throw InputError("assign_patches: alpha width does not match the grid");
    AssignmentMap out(grid, static_cast<int>(alpha.rows()));
    for (Eigen::Index n = 0; n < alpha.cols(); ++n) {
        Eigen::Index best = 0;
        for (Eigen::Index k = 1; k < alpha.rows(); ++k)
            if (alpha(k, n) > alpha(best, n)) best = k;
        out.data()[static_cast<std::size_t>(n)] = static_cast<std::uint16_t>(best);
    }
    return out;
}

namespace {

Matrix mixture(const Matrix& recon, const Matrix& alpha, Eigen::Index dim) {
    const Eigen::Index k_n = alpha.rows(), n_n = alpha.cols();
    Matrix mixed = Matrix::Zero(n_n, dim);
    for (Eigen::Index k = 0; k < k_n; ++k)
        mixed += alpha.row(k).transpose().asDiagonal() * recon.middleRows(k * n_n, n_n).leftCols(dim);
    return mixed;
}

}  // namespace

double reconstruction_loss(const Matrix& recon, const Matrix& alpha, const Matrix& target) {
    if (recon.rows() != alpha.rows() * alpha.cols() || alpha.cols() != target.rows() || recon.cols() < target.cols())
        throw InputError("reconstruction_loss: shape mismatch");
    const Matrix mixed = mixture(recon, alpha, target.cols());
    return (mixed - target).squaredNorm() / static_cast<double>(target.size());
}

GroupingModel::GroupingModel(const GroupingConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    const int ds = config_.slot_dim, d = config_.feature_dim;
    input_position = nn::Linear(ds, d);
    input_norm = nn::LayerNorm(d);
    to_key = nn::Linear(d, ds, false);
    to_value = nn::Linear(d, ds, false);
    to_query = nn::Linear(ds, ds, false);
    slot_norm = nn::LayerNorm(ds);
    mlp_norm = nn::LayerNorm(ds);
    gru = nn::GRUCell(ds, ds);
    mlp_in = nn::Linear(ds, config_.mlp_hidden);
    mlp_out = nn::Linear(config_.mlp_hidden, ds);
    slot_mean.resize(1, ds);
    slot_log_std.resize(1, ds);
    decoder_hidden = nn::Linear(ds, config_.decoder_hidden);
    decoder_out = nn::Linear(config_.decoder_hidden, d + 1);

    std::mt19937_64 rng(seed);
    for (auto* l : {&input_position, &to_key, &to_value, &to_query, &mlp_in, &mlp_out, &decoder_hidden, &decoder_out})
        l->init(rng);
    gru.init(rng);
    std::normal_distribution<double> normal(0.0, 0.1);
    for (Eigen::Index i = 0; i < slot_mean.value.size(); ++i) slot_mean.value(0, i) = normal(rng);
}

nn::ParamList GroupingModel::params() {
    nn::ParamList out;
    if (config_.input_positions) input_position.collect("input_position", out);
    input_norm.collect("input_norm", out);
    to_key.collect("to_key", out);
    to_value.collect("to_value", out);
    to_query.collect("to_query", out);
    slot_norm.collect("slot_norm", out);
    gru.collect("gru", out);
    mlp_norm.collect("mlp_norm", out);
    mlp_in.collect("mlp_in", out);
    mlp_out.collect("mlp_out", out);
    out.emplace_back("slot_mean", &slot_mean);
    out.emplace_back("slot_log_std", &slot_log_std);
    decoder_hidden.collect("decoder_hidden", out);
    decoder_out.collect("decoder_out", out);
    return out;
}

struct GroupingModel::SegmentTrace {
    struct Iteration {
        Matrix prev;
        nn::LayerNorm::Cache norm;
        Matrix normed, query, attn, weights;
        RowVector column_sum;
        Matrix updates;
        nn::GRUCell::Cache gru;
        nn::LayerNorm::Cache mlp_norm;
        Matrix mlp_input, mlp_pre, mlp_act;
    };
    Matrix positions;
    nn::LayerNorm::Cache input_norm;
    Matrix normed_tokens, keys, values;
    Matrix noise;
    std::vector<Iteration> iterations;
    Matrix slots;
    // Decoder.
    Matrix pe;
    Matrix pre, out, alpha;
    Eigen::Index first_row = 0;  // first grid row covered by this segment
};

struct GroupingModel::Trace {
    std::vector<SegmentTrace> segments;
    Matrix mixed;
};

void GroupingModel::check_volume(const FeatureVolume& volume) const {
    if (volume.dim() != config_.feature_dim)
        throw InputError("feature width " + std::to_string(volume.dim()) + " does not match model width " +
                         std::to_string(config_.feature_dim));
    if (volume.features.rows() != static_cast<Eigen::Index>(volume.shape.size()) || volume.shape.size() == 0)
        throw InputError("feature volume rows do not match its grid");
    if (!all_finite(volume.features)) throw NumericError("feature volume contains non-finite values");
}

int GroupingModel::segments(const GridShape& grid) const {
    return config_.mode == GroupingMode::PerFrame ? grid.frames : 1;
}

Matrix GroupingModel::sample_noise(const GridShape& grid, std::uint64_t seed) const {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix noise(static_cast<Eigen::Index>(segments(grid)) * config_.num_slots, config_.slot_dim);
    for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = normal(rng);
    return noise;
}

Matrix GroupingModel::segment_positions(const Matrix& pe, const GridShape& grid, int segment) const {
    if (config_.mode == GroupingMode::SpatioTemporal) return pe;
    const auto fs = static_cast<Eigen::Index>(grid.frame_size());
    return pe.middleRows(segment * fs, fs);
}

namespace {

struct AttentionCore {
    const GroupingModel& m;
    const GroupingConfig& cfg;

    template <typename Trace>
    Matrix run(const Matrix& tokens, const Matrix& positions, const Matrix& noise, Trace& tr, Matrix* attention) const {
        if (noise.rows() != cfg.num_slots || noise.cols() != cfg.slot_dim)
            throw InputError("slot initialization noise must be K x D_slot");
        if (tokens.rows() < 1 || tokens.cols() != cfg.feature_dim) throw InputError("slot_attention: bad token shape");
        if (!all_finite(tokens)) throw NumericError("slot_attention: non-finite tokens");
        Matrix x = tokens;
        if (cfg.input_positions) {
            if (positions.rows() != tokens.rows()) throw InputError("slot_attention: positions do not match tokens");
            x += m.input_position.forward(positions);
        }
        tr.normed_tokens = m.input_norm.forward(x, tr.input_norm);
        tr.keys = m.to_key.forward(tr.normed_tokens);
        tr.values = m.to_value.forward(tr.normed_tokens);
        tr.noise = noise;
        Matrix slots = noise.array().rowwise() * m.slot_log_std.value.row(0).array().exp();
        slots.rowwise() += m.slot_mean.value.row(0);

        const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.slot_dim));
        tr.iterations.resize(static_cast<std::size_t>(cfg.iterations));
        for (auto& it : tr.iterations) {
            it.prev = slots;
            it.normed = m.slot_norm.forward(slots, it.norm);
            it.query = m.to_query.forward(it.normed);
            it.attn = nn::softmax_rows(kernels::attention_logits(tr.keys, it.query, scale, m.backend));
            Matrix shifted = it.attn.array() + cfg.epsilon;
            it.column_sum = shifted.colwise().sum();
            it.weights = shifted.array().rowwise() / it.column_sum.array();
            it.updates.noalias() = it.weights.transpose() * tr.values;
            const Matrix h = m.gru.forward(it.updates, it.prev, it.gru);
            it.mlp_input = m.mlp_norm.forward(h, it.mlp_norm);
            it.mlp_pre = m.mlp_in.forward(it.mlp_input);
            it.mlp_act = nn::relu(it.mlp_pre);
            slots = h + m.mlp_out.forward(it.mlp_act);
        }
        if (attention) *attention = tr.iterations.back().attn.transpose();
        return slots;
    }
};

}  // namespace

GroupingModel::AttentionResult GroupingModel::slot_attention(const Matrix& tokens, const Matrix& positions,
                                                             const Matrix& init_noise) const {
    SegmentTrace tr;
    AttentionResult res;
    res.slots = AttentionCore{*this, config_}.run(tokens, positions, init_noise, tr, &res.attention);
    return res;
}

GroupingModel::AttentionResult GroupingModel::slot_attention(const Matrix& tokens, const Matrix& positions,
                                                             std::uint64_t seed) const {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix noise(config_.num_slots, config_.slot_dim);
    for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = normal(rng);
    return slot_attention(tokens, positions, noise);
}

namespace {

Matrix softmax_columns(const Matrix& logits) {
    Matrix out(logits.rows(), logits.cols());
    for (Eigen::Index n = 0; n < logits.cols(); ++n) {
        const double mx = logits.col(n).maxCoeff();
        out.col(n) = (logits.col(n).array() - mx).exp();
        out.col(n) /= out.col(n).sum();
    }
    return out;
}

}  // namespace

GroupingModel::Decoded GroupingModel::decode_slots(const Matrix& slots, const Matrix& pe) const {
    if (slots.cols() != config_.slot_dim || pe.cols() != config_.slot_dim)
        throw InputError("decode_slots: width mismatch");
    if (!all_finite(slots)) throw NumericError("decode_slots: non-finite slots");
    const Matrix slot_proj = slots * decoder_hidden.weight.value.transpose();
    const Matrix pos_proj = decoder_hidden.forward(pe);
    Matrix pre, out;
    kernels::broadcast_mlp_forward(slot_proj, pos_proj, decoder_out.weight.value, decoder_out.bias.value.row(0), pre,
                                   out, backend);
    const Eigen::Index k_n = slots.rows(), n_n = pe.rows(), d = config_.feature_dim;
    Matrix logits(k_n, n_n);
    for (Eigen::Index k = 0; k < k_n; ++k) logits.row(k) = out.block(k * n_n, d, n_n, 1).transpose();
    return {out.leftCols(d), softmax_columns(logits)};
}

double GroupingModel::run(const FeatureVolume& volume, const Matrix& noise, SlotSet* out, Trace* trace) const {
    check_volume(volume);
    const GridShape& g = volume.shape;
    const int segs = segments(g);
    const int k_n = config_.num_slots;
    if (noise.rows() != static_cast<Eigen::Index>(segs) * k_n || noise.cols() != config_.slot_dim)
        throw InputError("initial noise has the wrong shape for this grid");
    const Matrix pe = positional_encoding(g.frames, g.rows, g.cols, config_.slot_dim);
    const auto n_total = static_cast<Eigen::Index>(g.size());
    const Eigen::Index seg_len = n_total / segs;
    const Eigen::Index d = config_.feature_dim;

    if (out) {
        out->grid = g;
        out->num_slots = k_n;
        out->slots.resize(static_cast<Eigen::Index>(segs) * k_n, config_.slot_dim);
        out->attention.resize(k_n, n_total);
        out->alpha.resize(k_n, n_total);
        out->recon.resize(static_cast<Eigen::Index>(k_n) * n_total, d);
    }
    Trace local;
    Trace& tr = trace ? *trace : local;
    tr.segments.assign(static_cast<std::size_t>(segs), {});
    tr.mixed = Matrix::Zero(n_total, d);

    for (int s = 0; s < segs; ++s) {
        SegmentTrace& st = tr.segments[static_cast<std::size_t>(s)];
        st.first_row = s * seg_len;
        const Matrix tokens = volume.features.middleRows(st.first_row, seg_len);
        st.positions = segment_positions(pe, g, s);
        Matrix attention;
        st.slots = AttentionCore{*this, config_}.run(tokens, st.positions, noise.middleRows(s * k_n, k_n), st,
                                                     out ? &attention : nullptr);

        st.pe = st.positions;
        const Matrix slot_proj = st.slots * decoder_hidden.weight.value.transpose();
        const Matrix pos_proj = decoder_hidden.forward(st.pe);
        kernels::broadcast_mlp_forward(slot_proj, pos_proj, decoder_out.weight.value, decoder_out.bias.value.row(0),
                                       st.pre, st.out, backend);
        Matrix logits(k_n, seg_len);
        for (int k = 0; k < k_n; ++k) logits.row(k) = st.out.block(k * seg_len, d, seg_len, 1).transpose();
        st.alpha = softmax_columns(logits);
        for (int k = 0; k < k_n; ++k)
            tr.mixed.middleRows(st.first_row, seg_len) +=
                st.alpha.row(k).transpose().asDiagonal() * st.out.block(k * seg_len, 0, seg_len, d);

        if (out) {
            out->slots.middleRows(static_cast<Eigen::Index>(s) * k_n, k_n) = st.slots;
            out->attention.middleCols(st.first_row, seg_len) = attention;
            out->alpha.middleCols(st.first_row, seg_len) = st.alpha;
            for (int k = 0; k < k_n; ++k)
                out->recon.middleRows(k * n_total + st.first_row, seg_len) = st.out.block(k * seg_len, 0, seg_len, d);
        }
    }
    return (tr.mixed - volume.features).squaredNorm() / static_cast<double>(volume.features.size());
}

SlotSet GroupingModel::forward(const FeatureVolume& volume, const Matrix& noise) const {
    SlotSet out;
    run(volume, noise, &out, nullptr);
    return out;
}

SlotSet GroupingModel::forward(const FeatureVolume& volume, std::uint64_t seed) const {
    return forward(volume, sample_noise(volume.shape, seed));
}

double GroupingModel::loss(const FeatureVolume& volume, const Matrix& noise) const {
    return run(volume, noise, nullptr, nullptr);
}

double GroupingModel::loss_and_grad(const FeatureVolume& volume, const Matrix& noise, double weight) {
    Trace tr;
    const double value = run(volume, noise, nullptr, &tr);
    backward(volume, tr, weight);
    return value;
}

void GroupingModel::backward(const FeatureVolume& volume, Trace& tr, double weight) {
    const int k_n = config_.num_slots;
    const Eigen::Index d = config_.feature_dim;
    const double scale = 1.0 / std::sqrt(static_cast<double>(config_.slot_dim));
    const Matrix dmixed = (2.0 * weight / static_cast<double>(volume.features.size())) * (tr.mixed - volume.features);

    for (auto& st : tr.segments) {
        const Eigen::Index seg_len = st.alpha.cols();
        const auto dm = dmixed.middleRows(st.first_row, seg_len);

        // Mixture: mixed_n = sum_k alpha_kn y_kn.
        Matrix dout(st.out.rows(), st.out.cols());
        Matrix dalpha(k_n, seg_len);
        for (int k = 0; k < k_n; ++k) {
            const auto y = st.out.block(k * seg_len, 0, seg_len, d);
            dout.block(k * seg_len, 0, seg_len, d) = st.alpha.row(k).transpose().asDiagonal() * dm;
            dalpha.row(k) = (y.array() * dm.array()).rowwise().sum().transpose();
        }
        const RowVector expected = (st.alpha.array() * dalpha.array()).colwise().sum();
        for (int k = 0; k < k_n; ++k)
            dout.block(k * seg_len, d, seg_len, 1) =
                (st.alpha.row(k).array() * (dalpha.row(k).array() - expected.array())).transpose();

        Matrix dslot_proj, dpos_proj;
        RowVector dbias = decoder_out.bias.grad.row(0);
        kernels::broadcast_mlp_backward(st.pre, decoder_out.weight.value, dout, k_n, decoder_out.weight.grad, dbias,
                                        dslot_proj, dpos_proj, backend);
        decoder_out.bias.grad.row(0) = dbias;
        decoder_hidden.weight.grad.noalias() += dslot_proj.transpose() * st.slots;
        decoder_hidden.backward(st.pe, dpos_proj);
        Matrix dslots = dslot_proj * decoder_hidden.weight.value;

        // Slot attention, iterations in reverse.
        Matrix dkeys = Matrix::Zero(st.keys.rows(), st.keys.cols());
        Matrix dvalues = Matrix::Zero(st.values.rows(), st.values.cols());
        for (auto it = st.iterations.rbegin(); it != st.iterations.rend(); ++it) {
            const Matrix dact = mlp_out.backward(it->mlp_act, dslots);
            const Matrix dmlp_in = mlp_in.backward(it->mlp_input, nn::relu_backward(it->mlp_pre, dact));
            const Matrix dh = dslots + mlp_norm.backward(it->mlp_norm, dmlp_in);
            auto [dupdates, dprev] = gru.backward(it->gru, dh);

            const Matrix dweights = st.values * dupdates.transpose();  // N x K
            dvalues.noalias() += it->weights * dupdates;
            const RowVector wsum = (dweights.array() * it->weights.array()).colwise().sum();
            const Matrix dshifted =
                (dweights.rowwise() - wsum).array().rowwise() / it->column_sum.array();
            const Matrix dlogits = nn::softmax_rows_backward(it->attn, dshifted);
            dkeys.noalias() += scale * dlogits * it->query;
            const Matrix dquery = scale * dlogits.transpose() * st.keys;
            const Matrix dnormed = to_query.backward(it->normed, dquery);
            dprev += slot_norm.backward(it->norm, dnormed);
            dslots = std::move(dprev);
        }
        const RowVector stdv = slot_log_std.value.row(0).array().exp();
        slot_mean.grad.row(0) += dslots.colwise().sum();
        slot_log_std.grad.row(0) +=
            (dslots.array() * st.noise.array()).colwise().sum().matrix().cwiseProduct(stdv);

        Matrix dnormed_tokens = to_key.backward(st.normed_tokens, dkeys);
        dnormed_tokens += to_value.backward(st.normed_tokens, dvalues);
        const Matrix dtokens = input_norm.backward(st.input_norm, dnormed_tokens);
        if (config_.input_positions) input_position.backward(st.positions, dtokens);
    }
}

TrainLog train_grouping(const std::vector<FeatureVolume>& dataset, GroupingModel& model,
                        const GroupingTrainConfig& config, const StepCallback& on_step) {
    if (dataset.empty()) throw ConfigError("train_grouping: empty dataset");
    if (config.steps < 0 || config.batch_size < 1) throw ConfigError("train_grouping: bad step or batch count");
    const auto params = model.params();
    nn::Adam opt(params);
    std::mt19937_64 rng(config.seed);
    std::uniform_int_distribution<std::size_t> pick(0, dataset.size() - 1);
    TrainLog log;
    for (int step = 0; step < config.steps; ++step) {
        nn::zero_grads(params);
        double total = 0.0;
        for (int b = 0; b < config.batch_size; ++b) {
            const FeatureVolume& vol = dataset[pick(rng)];
            const Matrix noise = model.sample_noise(vol.shape, rng());
            total += model.loss_and_grad(vol, noise, 1.0 / config.batch_size);
        }
        const double mean = total / config.batch_size;
        if (!std::isfinite(mean))
            throw NumericError("grouping training diverged at step " + std::to_string(step) + " (loss " +
                               std::to_string(mean) + ")");
        log.grad_norm.push_back(nn::clip_grad_norm(params, config.clip_norm));
        opt.step(nn::warmup_exponential_lr(step, config.learning_rate, config.warmup_steps, config.decay_rate,
                                           config.decay_steps));
        log.loss.push_back(mean);
        if (on_step) on_step(step, mean);
    }
    nn::snap_to_float(params);
    return log;
}

void save_grouping(const GroupingModel& model, const std::filesystem::path& dir, std::uint64_t seed,
                   int steps_trained) {
    const auto& c = model.config();
    Archive ar;
    ar.meta() = {{"kind", "grouping_checkpoint"},
                 {"version", 1},
                 {"num_slots", c.num_slots},
                 {"slot_dim", c.slot_dim},
                 {"feature_dim", c.feature_dim},
                 {"iterations", c.iterations},
                 {"mlp_hidden", c.mlp_hidden},
                 {"decoder_hidden", c.decoder_hidden},
                 {"epsilon", c.epsilon},
                 {"grouping_mode", grouping_mode_name(c.mode)},
                 {"input_positions", c.input_positions},
                 {"seed", seed},
                 {"steps", steps_trained}};
    for (const auto& [name, p] : const_cast<GroupingModel&>(model).params()) ar.put_matrix(name, p->value);
    ar.save(dir);
}

GroupingModel load_grouping(const std::filesystem::path& dir) {
    const Archive ar = Archive::load(dir);
    const auto& m = ar.meta();
    GroupingConfig c;
    try {
        if (m.at("kind").get<std::string>() != "grouping_checkpoint")
            throw FormatError(dir.string() + " is not a grouping checkpoint");
        if (m.at("version").get<int>() != 1) throw FormatError("unsupported grouping checkpoint version");
        c.num_slots = m.at("num_slots").get<int>();
        c.slot_dim = m.at("slot_dim").get<int>();
        c.feature_dim = m.at("feature_dim").get<int>();
        c.iterations = m.at("iterations").get<int>();
        c.mlp_hidden = m.at("mlp_hidden").get<int>();
        c.decoder_hidden = m.at("decoder_hidden").get<int>();
        c.epsilon = m.at("epsilon").get<double>();
        c.mode = grouping_mode_from_name(m.at("grouping_mode").get<std::string>());
        c.input_positions = m.at("input_positions").get<bool>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("grouping checkpoint manifest: ") + e.what());
    }
    GroupingModel model(c, 0);
    for (const auto& [name, p] : model.params()) {
        const Matrix v = ar.get_matrix(name);
        if (v.rows() != p->value.rows() || v.cols() != p->value.cols())
            throw FormatError("checkpoint array '" + name + "' has the wrong shape");
        p->value = v;
    }
    return model;
}

}  // namespace vslot
