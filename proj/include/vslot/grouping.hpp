#pragma once

#include "vslot/assignment.hpp"
#include "vslot/kernels.hpp"
#include "vslot/nn.hpp"
#include "vslot/scenes.hpp"
#include "vslot/volumes.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace vslot {

enum class GroupingMode { SpatioTemporal, PerFrame };

std::string grouping_mode_name(GroupingMode m);
GroupingMode grouping_mode_from_name(const std::string& name);

/// Flattens each p x p x 3 pixel block of every frame into one token row,
/// grid order (t, h, w). Throws InputError if H or W is not a multiple of p.
Matrix tokenize(const VideoClip& clip, int patch_size);

/// Sinusoidal code over (t, h, w): per axis 2*(dim/6) channels laid out as
/// [sin..., cos...]; channels past 3 * 2 * (dim/6) are zero. Frequencies are
/// pi*(i+1)/(2n) for an axis of length n, so the lowest one is injective
/// over the axis and the code depends only on relative position.
Matrix positional_encoding(int frames, int rows, int cols, int dim);

struct GroupingConfig {
    int num_slots = 5;
    int slot_dim = 64;
    int feature_dim = 32;
    int iterations = 3;
    int mlp_hidden = 128;
    int decoder_hidden = 256;
    double epsilon = 1e-8;
    GroupingMode mode = GroupingMode::SpatioTemporal;
    bool input_positions = true;  // learned projection of the code added to the input tokens

    void validate() const;
};

/// Decoder outputs over one grid.
struct SlotSet {
    GridShape grid;
    int num_slots = 0;
    Matrix slots;      // (segments * K) x D_slot; one segment per clip, or per frame in per-frame mode
    Matrix attention;  // K x N, final slot-attention weights (normalized over slots)
    Matrix alpha;      // K x N, decoder masks (normalized over slots)
    Matrix recon;      // (K * N) x D, row k * N + n
};

/// Argmax over slots per position, ties toward the lowest slot index.
AssignmentMap assign_patches(const Matrix& alpha, const GridShape& grid);

/// Mean squared error between sum_k alpha_k * y_k and the target, over all
/// positions and channels.
double reconstruction_loss(const Matrix& recon, const Matrix& alpha, const Matrix& target);

class GroupingModel {
public:
    GroupingModel() = default;
    GroupingModel(const GroupingConfig& config, std::uint64_t seed);

    const GroupingConfig& config() const { return config_; }
    nn::ParamList params();

    struct AttentionResult {
        Matrix slots;      // K x D_slot
        Matrix attention;  // K x N
    };
    /// Iterative slot attention over `tokens` (N x D). `positions` holds the
    /// positional code rows of the tokens (ignored when input positions are
    /// off); `init_noise` is the K x D_slot standard-normal draw.
    AttentionResult slot_attention(const Matrix& tokens, const Matrix& positions, const Matrix& init_noise) const;
    /// Same, drawing the initial noise from `seed`.
    AttentionResult slot_attention(const Matrix& tokens, const Matrix& positions, std::uint64_t seed) const;

    struct Decoded {
        Matrix recon;  // (K * N) x D
        Matrix alpha;  // K x N
    };
    Decoded decode_slots(const Matrix& slots, const Matrix& pe) const;

    /// Number of independent slot-attention runs for a grid.
    int segments(const GridShape& grid) const;
    Matrix sample_noise(const GridShape& grid, std::uint64_t seed) const;

    SlotSet forward(const FeatureVolume& volume, const Matrix& noise) const;
    SlotSet forward(const FeatureVolume& volume, std::uint64_t seed) const;
    double loss(const FeatureVolume& volume, const Matrix& noise) const;
    /// Reconstruction loss; adds weight * dloss/dparam into the gradients.
    double loss_and_grad(const FeatureVolume& volume, const Matrix& noise, double weight);

    kernels::Backend backend = kernels::Backend::Parallel;

    // Slot attention.
    nn::Linear input_position;  // D_slot -> D
    nn::LayerNorm input_norm;
    nn::Linear to_key, to_value, to_query;
    nn::LayerNorm slot_norm, mlp_norm;
    nn::GRUCell gru;
    nn::Linear mlp_in, mlp_out;
    nn::Param slot_mean, slot_log_std;  // 1 x D_slot each
    // Broadcast decoder.
    nn::Linear decoder_hidden;  // D_slot -> hidden
    nn::Linear decoder_out;     // hidden -> D + 1, last channel is the mask logit

private:
    struct Trace;
    struct SegmentTrace;
    void check_volume(const FeatureVolume& volume) const;
    Matrix segment_positions(const Matrix& pe, const GridShape& grid, int segment) const;
    double run(const FeatureVolume& volume, const Matrix& noise, SlotSet* out, Trace* trace) const;
    void backward(const FeatureVolume& volume, Trace& trace, double weight);

    GroupingConfig config_;
};

struct GroupingTrainConfig {
    int steps = 2000;
    int batch_size = 8;
    double learning_rate = 3e-3;
    int warmup_steps = 200;
    double decay_rate = 0.5;
    int decay_steps = 1000;
    double clip_norm = 1.0;
    std::uint64_t seed = 0;
};

struct TrainLog {
    std::vector<double> loss;  // mean batch loss per step
    std::vector<double> grad_norm;
};

using StepCallback = std::function<void(int step, double loss)>;

/// Adam with warm-up then exponential decay and global gradient clipping.
/// Parameters are rounded to float32 at the end so checkpoints reload exactly.
/// Throws NumericError if the loss becomes non-finite.
TrainLog train_grouping(const std::vector<FeatureVolume>& dataset, GroupingModel& model,
                        const GroupingTrainConfig& config, const StepCallback& on_step = {});

void save_grouping(const GroupingModel& model, const std::filesystem::path& dir, std::uint64_t seed,
                   int steps_trained);
GroupingModel load_grouping(const std::filesystem::path& dir);

}  // namespace vslot
