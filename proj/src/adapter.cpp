#include "vslot/adapter.hpp"

#include "vslot/archive.hpp"
#include "vslot/optim.hpp"

#include <cmath>
#include <random>

namespace vslot {

void AdapterConfig::validate() const {
    if (dim < 1 || heads < 1 || dim % heads != 0) throw ConfigError("adapter dim must be a positive multiple of heads");
    if (feedforward && ffn_hidden < 1) throw ConfigError("adapter ffn_hidden must be positive");
}

AdapterModel::AdapterModel(const AdapterConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    const int d = config_.dim;
    attn_norm = nn::LayerNorm(d);
    query = nn::Linear(d, d);
    key = nn::Linear(d, d);
    value = nn::Linear(d, d);
    proj = nn::Linear(d, d);
    ffn_norm = nn::LayerNorm(d);
    ffn_in = nn::Linear(d, config_.feedforward ? config_.ffn_hidden : 1);
    ffn_out = nn::Linear(config_.feedforward ? config_.ffn_hidden : 1, d);
    std::mt19937_64 rng(seed);
    for (auto* l : {&query, &key, &value, &proj, &ffn_in, &ffn_out}) l->init(rng);
}

nn::ParamList AdapterModel::params() {
    nn::ParamList out;
    attn_norm.collect("attn_norm", out);
    query.collect("query", out);
    key.collect("key", out);
    value.collect("value", out);
    proj.collect("proj", out);
    if (config_.feedforward) {
        ffn_norm.collect("ffn_norm", out);
        ffn_in.collect("ffn_in", out);
        ffn_out.collect("ffn_out", out);
    }
    return out;
}

Matrix AdapterModel::readout(const Matrix& tokens) const {
    Trace tr;
    return readout(tokens, tr);
}

Matrix AdapterModel::readout(const Matrix& tokens, Trace& tr) const {
    if (tokens.cols() != config_.dim || tokens.rows() < 1) throw InputError("adapter readout: bad token shape");
    const int h_n = config_.heads, hd = config_.dim / h_n;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    tr.input = tokens;
    tr.normed = attn_norm.forward(tokens, tr.attn_norm);
    tr.q = query.forward(tr.normed);
    tr.k = key.forward(tr.normed);
    tr.v = value.forward(tr.normed);
    tr.attn.resize(static_cast<std::size_t>(h_n));
    tr.heads_out.resize(tokens.rows(), config_.dim);
    for (int h = 0; h < h_n; ++h) {
        const auto qh = tr.q.middleCols(h * hd, hd);
        const auto kh = tr.k.middleCols(h * hd, hd);
        tr.attn[static_cast<std::size_t>(h)] = nn::softmax_rows(scale * qh * kh.transpose());
        tr.heads_out.middleCols(h * hd, hd) = tr.attn[static_cast<std::size_t>(h)] * tr.v.middleCols(h * hd, hd);
    }
    tr.mid = tokens + proj.forward(tr.heads_out);
    if (!config_.feedforward) return tr.mid;
    tr.ffn_input = ffn_norm.forward(tr.mid, tr.ffn_norm);
    tr.ffn_pre = ffn_in.forward(tr.ffn_input);
    tr.ffn_act = nn::relu(tr.ffn_pre);
    return tr.mid + ffn_out.forward(tr.ffn_act);
}

Matrix AdapterModel::readout_backward(const Trace& tr, const Matrix& dout) {
    const int h_n = config_.heads, hd = config_.dim / h_n;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    Matrix dmid = dout;
    if (config_.feedforward) {
        const Matrix dact = ffn_out.backward(tr.ffn_act, dout);
        const Matrix dinput = ffn_in.backward(tr.ffn_input, nn::relu_backward(tr.ffn_pre, dact));
        dmid += ffn_norm.backward(tr.ffn_norm, dinput);
    }
    const Matrix dheads = proj.backward(tr.heads_out, dmid);
    Matrix dq(tr.q.rows(), tr.q.cols()), dk(tr.k.rows(), tr.k.cols()), dv(tr.v.rows(), tr.v.cols());
    for (int h = 0; h < h_n; ++h) {
        const Matrix& a = tr.attn[static_cast<std::size_t>(h)];
        const auto doh = dheads.middleCols(h * hd, hd);
        dv.middleCols(h * hd, hd) = a.transpose() * doh;
        const Matrix da = doh * tr.v.middleCols(h * hd, hd).transpose();
        const Matrix ds = scale * nn::softmax_rows_backward(a, da);
        dq.middleCols(h * hd, hd) = ds * tr.k.middleCols(h * hd, hd);
        dk.middleCols(h * hd, hd) = ds.transpose() * tr.q.middleCols(h * hd, hd);
    }
    Matrix dnormed = query.backward(tr.normed, dq);
    dnormed += key.backward(tr.normed, dk);
    dnormed += value.backward(tr.normed, dv);
    return dmid + attn_norm.backward(tr.attn_norm, dnormed);
}

Vector cross_attention_pool(const Matrix& patches, const Vector& cls, Vector* weights) {
    if (patches.rows() < 1 || patches.cols() != cls.size()) throw InputError("cross_attention_pool: bad shapes");
    Vector scores = patches * cls;
    scores = (scores.array() - scores.maxCoeff()).exp();
    scores /= scores.sum();
    if (weights) *weights = scores;
    return patches.transpose() * scores;
}

Matrix similarity_matrix(const Matrix& pooled, const Matrix& cls) {
    if (pooled.cols() != cls.cols()) throw InputError("similarity_matrix: width mismatch");
    for (Eigen::Index i = 0; i < pooled.rows(); ++i)
        if (pooled.row(i).norm() == 0.0) throw NumericError("similarity_matrix: pooled row " + std::to_string(i) + " has zero norm");
    for (Eigen::Index i = 0; i < cls.rows(); ++i)
        if (cls.row(i).norm() == 0.0) throw NumericError("similarity_matrix: summary row " + std::to_string(i) + " has zero norm");
    const Matrix a = pooled.rowwise().normalized();
    const Matrix b = cls.rowwise().normalized();
    return a * b.transpose();
}

double info_nce(const Matrix& phi) {
    if (phi.rows() < 1 || phi.rows() != phi.cols()) throw InputError("info_nce needs a non-empty square matrix");
    const Eigen::Index k = phi.rows();
    if (k == 1) return 0.0;
    double total = 0.0;
    for (Eigen::Index i = 0; i < k; ++i) {
        const double mx = phi.row(i).maxCoeff();
        const double lse = mx + std::log((phi.row(i).array() - mx).exp().sum());
        total += lse - phi(i, i);
    }
    return total / static_cast<double>(k);
}

Matrix info_nce_grad(const Matrix& phi) {
    const Eigen::Index k = phi.rows();
    Matrix g = nn::softmax_rows(phi);
    g.diagonal().array() -= 1.0;
    return g / static_cast<double>(k);
}

namespace {

struct BatchForward {
    std::vector<AdapterModel::Trace> traces;
    std::vector<Matrix> readouts;
    std::vector<Vector> weights;
    Matrix pooled;
};

double forward_batch(const AdapterModel& model, const AdapterBatch& batch, BatchForward& fw) {
    const auto b = static_cast<Eigen::Index>(batch.patches.size());
    if (b < 1 || batch.summary.rows() != b) throw InputError("adapter batch: patches and summaries disagree");
    fw.traces.resize(static_cast<std::size_t>(b));
    fw.readouts.resize(static_cast<std::size_t>(b));
    fw.weights.resize(static_cast<std::size_t>(b));
    fw.pooled.resize(b, batch.summary.cols());
    for (Eigen::Index i = 0; i < b; ++i) {
        const auto si = static_cast<std::size_t>(i);
        fw.readouts[si] = model.readout(batch.patches[si], fw.traces[si]);
        fw.pooled.row(i) = cross_attention_pool(fw.readouts[si], batch.summary.row(i).transpose(), &fw.weights[si]).transpose();
    }
    return info_nce(similarity_matrix(fw.pooled, batch.summary));
}

}  // namespace

double adapter_objective(const AdapterModel& model, const AdapterBatch& batch) {
    BatchForward fw;
    return forward_batch(model, batch, fw);
}

double adapter_objective_and_grad(AdapterModel& model, const AdapterBatch& batch) {
    BatchForward fw;
    const double loss = forward_batch(model, batch, fw);
    const Matrix phi = similarity_matrix(fw.pooled, batch.summary);
    const Matrix dphi = info_nce_grad(phi);
    const Matrix cls_unit = batch.summary.rowwise().normalized();
    for (Eigen::Index i = 0; i < fw.pooled.rows(); ++i) {
        const auto si = static_cast<std::size_t>(i);
        const double norm = fw.pooled.row(i).norm();
        const RowVector u = fw.pooled.row(i) / norm;
        const RowVector du = dphi.row(i) * cls_unit;
        const RowVector dpooled = (du - du.dot(u) * u) / norm;

        const Matrix& p = fw.readouts[si];
        const Vector& w = fw.weights[si];
        const Vector dw = p * dpooled.transpose();
        const Vector ds = w.array() * (dw.array() - w.dot(dw));
        Matrix dp = w * dpooled;
        dp += ds * batch.summary.row(i);
        model.readout_backward(fw.traces[si], dp);
    }
    return loss;
}

AdapterTrainLog train_adapter(const FrameStream& stream, AdapterModel& model, const AdapterTrainConfig& config,
                              const std::function<void(int, double)>& on_step) {
    if (config.steps < 0 || config.batch_size < 1) throw ConfigError("train_adapter: bad step or batch count");
    const auto params = model.params();
    nn::Adam adam(params);
    nn::Sgd sgd(params);
    AdapterTrainLog log;
    for (int step = 0; step < config.steps; ++step) {
        AdapterBatch batch;
        batch.summary.resize(config.batch_size, model.config().dim);
        for (int i = 0; i < config.batch_size; ++i) {
            TeacherOutput f = stream();
            batch.summary.row(i) = f.summary.transpose();
            batch.patches.push_back(std::move(f.patches));
        }
        nn::zero_grads(params);
        const double loss = adapter_objective_and_grad(model, batch);
        if (!std::isfinite(loss))
            throw NumericError("adapter training diverged at step " + std::to_string(step));
        if (config.clip_norm > 0.0) nn::clip_grad_norm(params, config.clip_norm);
        const double lr = nn::cosine_lr(step, config.learning_rate, config.steps);
        if (config.optimizer == AdapterOptimizer::Adam)
            adam.step(lr);
        else
            sgd.step(lr);
        log.loss.push_back(loss);
        if (on_step) on_step(step, loss);
    }
    nn::snap_to_float(params);
    return log;
}

Matrix encode_semantic(const TeacherOutput& frame, const AdapterModel& model) { return model.readout(frame.patches); }

SemanticVolume semantic_volume(const GroundTruth& gt, const OracleSemanticTeacher& teacher, const AdapterModel* model,
                               std::uint64_t noise_seed) {
    SemanticVolume vol;
    vol.shape = gt.grid;
    const auto fs = static_cast<Eigen::Index>(gt.grid.frame_size());
    vol.features.resize(static_cast<Eigen::Index>(gt.grid.size()), teacher.dim());
    for (int t = 0; t < gt.grid.frames; ++t) {
        const TeacherOutput out = oracle_semantics(gt, t, teacher, mix_seed(noise_seed, static_cast<std::uint64_t>(t)));
        vol.features.middleRows(t * fs, fs) = model ? encode_semantic(out, *model) : out.patches;
    }
    return vol;
}

void save_adapter(const AdapterModel& model, const std::filesystem::path& dir, std::uint64_t seed, int steps) {
    const auto& c = model.config();
    Archive ar;
    ar.meta() = {{"kind", "adapter_checkpoint"}, {"version", 1},      {"dim", c.dim},
                 {"heads", c.heads},             {"ffn_hidden", c.ffn_hidden}, {"feedforward", c.feedforward},
                 {"seed", seed},                 {"steps", steps}};
    for (const auto& [name, p] : const_cast<AdapterModel&>(model).params()) ar.put_matrix(name, p->value);
    ar.save(dir);
}

AdapterModel load_adapter(const std::filesystem::path& dir) {
    const Archive ar = Archive::load(dir);
    const auto& m = ar.meta();
    AdapterConfig c;
    try {
        if (m.at("kind").get<std::string>() != "adapter_checkpoint")
            throw FormatError(dir.string() + " is not an adapter checkpoint");
        if (m.at("version").get<int>() != 1) throw FormatError("unsupported adapter checkpoint version");
        c.dim = m.at("dim").get<int>();
        c.heads = m.at("heads").get<int>();
        c.ffn_hidden = m.at("ffn_hidden").get<int>();
        c.feedforward = m.at("feedforward").get<bool>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("adapter checkpoint manifest: ") + e.what());
    }
    AdapterModel model(c, 0);
    for (const auto& [name, p] : model.params()) {
        const Matrix v = ar.get_matrix(name);
        if (v.rows() != p->value.rows() || v.cols() != p->value.cols())
            throw FormatError("checkpoint array '" + name + "' has the wrong shape");
        p->value = v;
    }
    return model;
}

}  // namespace vslot
