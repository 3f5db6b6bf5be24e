#pragma once

// Manual backpropagation through projector + GCN + language model, an
// adaptive-moment optimizer with linear warmup and cosine decay, and the
// two-stage regimen (encoder-only with a frozen LM, then joint). Gradient
// reduction over a batch always runs in example order, so results do not
// depend on the worker count.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "fcni/encoder.hpp"
#include "fcni/lm.hpp"
#include "fcni/tokenizer.hpp"

namespace fcni {

struct Model {
    EncoderParams encoder;
    LmParams lm;
    AtlasPartition partition;
    double tau = 0.5;
    Tokenizer tokenizer;
};

// stage 0 = text-only LM pretraining, 1 = encoder alignment, 2 = joint.
struct ParamPartition {
    bool train_encoder = true;
    bool train_lm = true;

    static ParamPartition for_stage(int stage) {
        if (stage == 0) return {false, true};
        if (stage == 1) return {true, false};
        return {true, true};
    }
};

struct TrainConfig {
    int stage = 1;
    double learning_rate = 1e-3;
    std::size_t batch_size = 32;
    std::size_t epochs = 1;
    double warmup_ratio = 0.03;
    double weight_decay = 0.0;
    std::uint64_t seed = 0;
    bool deterministic = false;  // recorded; reduction order is fixed regardless
    std::size_t threads = 1;

    void validate() const;
};

struct TrainExample {
    std::vector<int> prompt_ids;
    std::vector<int> answer_ids;
    std::vector<const FcnMatrix*> fcns;  // empty selects the null embedding
};

struct Grads {
    EncoderParams encoder;
    LmParams lm;
    bool has_encoder = false;
    bool has_lm = false;
};

// Gradients of the mean masked loss over the batch; frozen halves are absent
// from the result. Throws a training error on non-finite loss.
Grads backward(const Model& model, const std::vector<TrainExample>& batch,
               const ParamPartition& partition, std::size_t threads, double* mean_loss);

double batch_loss(const Model& model, const std::vector<TrainExample>& batch,
                  std::size_t threads);

// Warmup-then-cosine factor in [0, 1]; 0 at step 0 (when warming up) and 0
// at the final step.
double lr_factor(std::size_t step_index, std::size_t total_steps, double warmup_ratio);

struct OptimizerState {
    EncoderParams m_enc, v_enc;
    LmParams m_lm, v_lm;
    std::size_t step = 0;
    bool has_encoder = false;
    bool has_lm = false;

    static OptimizerState init(const Model& model, const ParamPartition& partition);
};

void adam_step(Model& model, const Grads& grads, OptimizerState& state, const TrainConfig& config,
               std::size_t step_index, std::size_t total_steps);

struct TrainSummary {
    double initial_loss = 0.0;
    double final_loss = 0.0;
    std::size_t steps = 0;
};

// Runs the full loop for the configured stage; appends one JSON line per
// step to log_path when it is non-empty.
TrainSummary train(Model& model, const std::vector<TrainExample>& dataset,
                   const TrainConfig& config, const std::filesystem::path& log_path = {});

struct GradCheckEntry {
    std::string tensor;
    double max_rel_err = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double worst = 0.0;
    double min_relu_margin = 0.0;  // smallest |pre-activation| near the relu kink
};

// Central finite differences over every element of every trainable tensor.
GradCheckReport gradient_check(Model& model, const std::vector<TrainExample>& batch,
                               const ParamPartition& partition, double h = 1e-6);

void save_checkpoint(const std::filesystem::path& dir, const Model& model, int stage,
                     std::size_t step, const std::string& config_hash);
Model load_checkpoint(const std::filesystem::path& dir);

}  // namespace fcni
