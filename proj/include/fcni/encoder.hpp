#pragma once

// Multi-scale connectivity encoder: ROI tokens are matrix rows, subnetwork
// tokens are per-subnetwork means, the whole-graph token is the mean node
// feature after a two-layer graph convolution, and a shared two-layer
// perceptron projects every token into the language model width.

#include <functional>
#include <string>
#include <vector>

#include "fcni/fcn.hpp"
#include "fcni/linalg.hpp"

namespace fcni {

struct RawTokens {
    Matrix roi;     // D x D
    Matrix subnet;  // N x D
    Matrix global;  // 1 x D
};

struct EncoderConfig {
    std::size_t d = 116;
    std::size_t gcn_hidden = 256;
    std::size_t proj_hidden = 256;
    std::size_t d_model = 64;
};

struct EncoderParams {
    EncoderConfig cfg;
    Matrix gcn_w1;   // D x H1
    Matrix gcn_b1;   // 1 x H1
    Matrix gcn_w2;   // H1 x D
    Matrix gcn_b2;   // 1 x D
    Matrix proj_w1;  // D x Hp
    Matrix proj_b1;  // 1 x Hp
    Matrix proj_w2;  // Hp x d_model
    Matrix proj_b2;  // 1 x d_model

    static EncoderParams init(const EncoderConfig& cfg, std::uint64_t seed);
    void for_each_tensor(const std::function<void(const std::string&, Matrix&)>& fn);
    void zero_like_from(const EncoderParams& shape);
};

// Token order is ROI 1..D, subnetwork 1..N, then the global token.
struct FcnTokenSequence {
    Matrix tokens;  // (D + N + 1) x d_model
    std::size_t roi_count = 0;
    std::size_t subnet_count = 0;

    std::size_t count() const { return tokens.rows; }
};

// Intermediate activations kept for the training backward pass.
struct EncodeCache {
    Matrix h0;        // FCN values (D x D)
    Matrix norm_adj;  // D x D
    Matrix ah0;       // norm_adj * h0
    Matrix z1;        // pre-activation, D x H1
    Matrix h1;        // rectified, D x H1
    Matrix ah1;       // norm_adj * h1
    Matrix h2;        // D x D
    Matrix raw;       // (D + N + 1) x D stacked raw tokens
    Matrix proj_z;    // (D + N + 1) x Hp pre-activation
    Matrix proj_h;    // rectified
};

Matrix extract_roi_tokens(const FcnMatrix& fcn);

Matrix pool_subnetworks(const Matrix& roi_tokens, const AtlasPartition& partition);

// H2 = norm_adj * relu(norm_adj * fcn * W1 + b1) * W2 + b2
Matrix gcn_forward(const FcnMatrix& fcn, const NormalizedAdjacency& norm_adj,
                   const EncoderParams& params, EncodeCache* cache = nullptr);

Matrix global_pool(const Matrix& node_matrix);

FcnTokenSequence project_tokens(const RawTokens& raw, const EncoderParams& params,
                                EncodeCache* cache = nullptr);

FcnTokenSequence encode(const FcnMatrix& fcn, const AtlasPartition& partition,
                        const EncoderParams& params, double tau, EncodeCache* cache = nullptr);

// Accumulates parameter gradients for one example given d(loss)/d(tokens).
// The FCN itself is an input, not a parameter, so nothing flows past h0.
void encode_backward(const Matrix& d_tokens, const EncodeCache& cache,
                     const EncoderParams& params, EncoderParams& grads);

}  // namespace fcni
