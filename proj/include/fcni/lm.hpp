#pragma once

// Decoder-only toy language model: learned token + absolute position
// embeddings, pre-norm causal attention blocks with GELU feed-forwards, a
// linear output head, and per-call retention of all attention maps. Prompts
// carry <fcn> placeholders; assembly either splices projected FCN token
// vectors (one full sequence per placeholder) or, before any connectivity
// data exists, a single learned null embedding per placeholder.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fcni/encoder.hpp"
#include "fcni/linalg.hpp"
#include "fcni/tokenizer.hpp"

namespace fcni {

struct LmConfig {
    std::size_t d_model = 64;
    std::size_t blocks = 2;
    std::size_t heads = 4;
    std::size_t ffn_hidden = 256;
    std::size_t max_seq = 512;
    std::size_t vocab = 0;
};

struct LmBlockParams {
    Matrix wq, wk, wv, wo;              // d x d
    Matrix bq, bk, bv, bo;              // 1 x d
    Matrix ln1_g, ln1_b, ln2_g, ln2_b;  // 1 x d
    Matrix fc1;                         // d x f
    Matrix fb1;                         // 1 x f
    Matrix fc2;                         // f x d
    Matrix fb2;                         // 1 x d
};

struct LmParams {
    LmConfig cfg;
    Matrix tok_emb;   // V x d
    Matrix pos_emb;   // max_seq x d
    Matrix fcn_null;  // 1 x d
    std::vector<LmBlockParams> blocks;
    Matrix lnf_g, lnf_b;  // 1 x d
    Matrix head;          // d x V

    static LmParams init(const LmConfig& cfg, std::uint64_t seed);
    void for_each_tensor(const std::function<void(const std::string&, Matrix&)>& fn);
    void zero_like_from(const LmParams& shape);
};

struct AttentionTensor {
    std::size_t layers = 0;
    std::size_t heads = 0;
    std::size_t seq = 0;
    std::vector<Matrix> maps;  // layers * heads entries, each seq x seq

    Matrix& at(std::size_t layer, std::size_t head) { return maps[layer * heads + head]; }
    const Matrix& at(std::size_t layer, std::size_t head) const {
        return maps[layer * heads + head];
    }
};

struct Span {
    std::size_t begin = 0;
    std::size_t end = 0;  // past-the-end
    std::size_t size() const { return end - begin; }
};

struct PosSrc {
    enum class Kind { word, fcnvec, nullvec };
    Kind kind = Kind::word;
    int token_id = 0;  // word positions
    std::size_t fcn_seq = 0;
    std::size_t fcn_idx = 0;
};

struct Assembled {
    std::vector<int> ids;  // per position; FCN-vector positions show <fcn>
    std::vector<PosSrc> src;
    Matrix emb;  // S x d, token/null/FCN vectors plus position embedding
    std::vector<Span> fcn_spans;
    Span answer_span;  // answer ids plus the closing <eos>

    std::size_t seq() const { return emb.rows; }
};

// fcns empty selects null-embedding mode (each placeholder keeps one
// position). Otherwise the placeholder count must equal fcns.size().
Assembled assemble_input(const std::vector<int>& prompt_ids,
                         const std::vector<const FcnTokenSequence*>& fcns,
                         const std::vector<int>& answer_ids, const LmParams& params);

struct LmBlockCache {
    Matrix x_in;
    Matrix ln1_xhat;
    std::vector<double> ln1_rstd;
    Matrix ln1_out;
    Matrix q, k, v;
    std::vector<Matrix> probs;  // one seq x seq matrix per head
    Matrix ctx;
    Matrix x_mid;
    Matrix ln2_xhat;
    std::vector<double> ln2_rstd;
    Matrix ln2_out;
    Matrix ffn_z;
    Matrix ffn_a;
};

struct LmCache {
    Matrix x0;
    std::vector<LmBlockCache> blocks;
    Matrix lnf_xhat;
    std::vector<double> lnf_rstd;
    Matrix h_final;
    Matrix logits;  // S x V
};

// Runs the stack over pre-assembled embeddings; fills cache and, when asked,
// the retained attention maps.
const Matrix& lm_forward(const Matrix& emb, const LmParams& params, LmCache& cache,
                         AttentionTensor* attention = nullptr);

// Mean next-token cross entropy over positions whose mask bit is set; the
// mask marks answer-token positions (targets), everything else contributes
// nothing. Throws on an empty mask.
double masked_loss(const Matrix& logits, const std::vector<int>& target_ids,
                   const std::vector<bool>& answer_mask);

// Loss plus d(loss)/d(logits) in one pass.
double masked_loss_backward(const Matrix& logits, const std::vector<int>& target_ids,
                            const std::vector<bool>& answer_mask, Matrix& d_logits);

// Backpropagates through the stack. Parameter gradients accumulate into
// *grads when given; input-embedding gradients are always produced so frozen
// configurations still pass gradients to whatever feeds the model.
Matrix lm_backward(const Matrix& d_logits, const LmCache& cache, const LmParams& params,
                   LmParams* grads);

struct DecodeMode {
    enum class Kind { greedy, sample };
    Kind kind = Kind::greedy;
    double temperature = 1.0;
    std::uint64_t seed = 0;

    static DecodeMode greedy() { return {}; }
    static DecodeMode sample(double temperature, std::uint64_t seed) {
        return {Kind::sample, temperature, seed};
    }
};

struct DecodeResult {
    std::vector<int> answer_ids;  // without the terminating <eos>
    bool hit_eos = false;
};

DecodeResult decode(const Assembled& prompt, const LmParams& params, const DecodeMode& mode,
                    std::size_t max_len);

std::vector<bool> answer_mask_of(const Assembled& a);

}  // namespace fcni
