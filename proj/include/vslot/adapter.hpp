#pragma once

#include "vslot/nn.hpp"
#include "vslot/scenes.hpp"
#include "vslot/volumes.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace vslot {

struct AdapterConfig {
    int dim = 32;
    int heads = 4;
    int ffn_hidden = 128;
    bool feedforward = true;

    void validate() const;
};

/// Replacement last transformer block for the frozen teacher: pre-norm
/// multi-head self-attention and feedforward, both residual.
class AdapterModel {
public:
    AdapterModel() = default;
    AdapterModel(const AdapterConfig& config, std::uint64_t seed);

    const AdapterConfig& config() const { return config_; }
    nn::ParamList params();

    /// M x D -> M x D.
    Matrix readout(const Matrix& tokens) const;

    struct Trace;
    Matrix readout(const Matrix& tokens, Trace& trace) const;
    /// Accumulates parameter gradients; returns dL/dtokens.
    Matrix readout_backward(const Trace& trace, const Matrix& dout);

    nn::LayerNorm attn_norm;
    nn::Linear query, key, value, proj;
    nn::LayerNorm ffn_norm;
    nn::Linear ffn_in, ffn_out;

private:
    AdapterConfig config_;
};

struct AdapterModel::Trace {
    Matrix input;
    nn::LayerNorm::Cache attn_norm;
    Matrix normed, q, k, v;
    std::vector<Matrix> attn;  // per head, M x M
    Matrix heads_out;
    Matrix mid;
    nn::LayerNorm::Cache ffn_norm;
    Matrix ffn_input, ffn_pre, ffn_act;
};

/// softmax over the M scores patches * cls, then the weighted patch mean.
Vector cross_attention_pool(const Matrix& patches, const Vector& cls, Vector* weights = nullptr);

/// Cosine of every pooled row against every cls row (k x k). Throws
/// NumericError naming the first zero-norm row.
Matrix similarity_matrix(const Matrix& pooled, const Matrix& cls);

/// -(1/k) sum_i log softmax(phi_i)_i, computed with a stable log-sum-exp.
double info_nce(const Matrix& phi);
/// d info_nce / d phi.
Matrix info_nce_grad(const Matrix& phi);

struct AdapterBatch {
    std::vector<Matrix> patches;  // per image, M x D (teacher penultimate tokens)
    Matrix summary;               // B x D (teacher summary tokens)
};

double adapter_objective(const AdapterModel& model, const AdapterBatch& batch);
/// Objective value; adds its gradient into the model's parameter gradients.
double adapter_objective_and_grad(AdapterModel& model, const AdapterBatch& batch);

enum class AdapterOptimizer { Sgd, Adam };

struct AdapterTrainConfig {
    int steps = 1000;
    int batch_size = 64;
    AdapterOptimizer optimizer = AdapterOptimizer::Adam;
    double learning_rate = 1e-3;
    double clip_norm = 0.0;  // 0 disables clipping
    std::uint64_t seed = 0;
};

struct AdapterTrainLog {
    std::vector<double> loss;
};

/// Produces the next unlabeled frame's teacher tokens.
using FrameStream = std::function<TeacherOutput()>;

/// Minimizes info_nce over batches drawn from the stream, cosine-annealed
/// learning rate. Parameters are rounded to float32 at the end.
AdapterTrainLog train_adapter(const FrameStream& stream, AdapterModel& model, const AdapterTrainConfig& config,
                              const std::function<void(int, double)>& on_step = {});

/// Adapted patch features of one frame, rows in (h, w) order.
Matrix encode_semantic(const TeacherOutput& frame, const AdapterModel& model);

/// Per-frame teacher tokens for a scene stacked into a volume; with no model
/// the raw teacher tokens are used.
SemanticVolume semantic_volume(const GroundTruth& gt, const OracleSemanticTeacher& teacher,
                               const AdapterModel* model, std::uint64_t noise_seed);

void save_adapter(const AdapterModel& model, const std::filesystem::path& dir, std::uint64_t seed, int steps);
AdapterModel load_adapter(const std::filesystem::path& dir);

}  // namespace vslot
