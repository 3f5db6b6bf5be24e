#include "fcni/encoder.hpp"

#include <cmath>

#include "fcni/error.hpp"
#include "fcni/rng.hpp"

namespace fcni {

namespace {

// Glorot-style uniform fan scaling; biases stay zero.
Matrix glorot(std::size_t rows, std::size_t cols, Rng& rng) {
    Matrix m(rows, cols);
    double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    for (auto& v : m.data) v = rng.uniform(-limit, limit);
    return m;
}

}  // namespace

EncoderParams EncoderParams::init(const EncoderConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    EncoderParams p;
    p.cfg = cfg;
    p.gcn_w1 = glorot(cfg.d, cfg.gcn_hidden, rng);
    p.gcn_b1 = Matrix(1, cfg.gcn_hidden);
    p.gcn_w2 = glorot(cfg.gcn_hidden, cfg.d, rng);
    p.gcn_b2 = Matrix(1, cfg.d);
    p.proj_w1 = glorot(cfg.d, cfg.proj_hidden, rng);
    p.proj_b1 = Matrix(1, cfg.proj_hidden);
    p.proj_w2 = glorot(cfg.proj_hidden, cfg.d_model, rng);
    p.proj_b2 = Matrix(1, cfg.d_model);
    return p;
}

void EncoderParams::for_each_tensor(const std::function<void(const std::string&, Matrix&)>& fn) {
    fn("enc.gcn_w1", gcn_w1);
    fn("enc.gcn_b1", gcn_b1);
    fn("enc.gcn_w2", gcn_w2);
    fn("enc.gcn_b2", gcn_b2);
    fn("enc.proj_w1", proj_w1);
    fn("enc.proj_b1", proj_b1);
    fn("enc.proj_w2", proj_w2);
    fn("enc.proj_b2", proj_b2);
}

void EncoderParams::zero_like_from(const EncoderParams& shape) {
    cfg = shape.cfg;
    auto zero = [](const Matrix& m) { return Matrix(m.rows, m.cols); };
    gcn_w1 = zero(shape.gcn_w1);
    gcn_b1 = zero(shape.gcn_b1);
    gcn_w2 = zero(shape.gcn_w2);
    gcn_b2 = zero(shape.gcn_b2);
    proj_w1 = zero(shape.proj_w1);
    proj_b1 = zero(shape.proj_b1);
    proj_w2 = zero(shape.proj_w2);
    proj_b2 = zero(shape.proj_b2);
}

Matrix extract_roi_tokens(const FcnMatrix& fcn) {
    return fcn.values;  // token i is row i
}

Matrix pool_subnetworks(const Matrix& roi_tokens, const AtlasPartition& partition) {
    if (roi_tokens.rows != partition.roi_count)
        throw invalid_input("pool_subnetworks: partition does not match token count");
    auto groups = partition.members();
    Matrix out(partition.subnet_count, roi_tokens.cols);
    for (std::size_t k = 0; k < groups.size(); ++k) {
        for (std::size_t i : groups[k])
            kern::axpy(1.0, roi_tokens.row(i), out.row(k), roi_tokens.cols);
        kern::scale(1.0 / static_cast<double>(groups[k].size()), out.row(k), out.cols);
    }
    return out;
}

Matrix gcn_forward(const FcnMatrix& fcn, const NormalizedAdjacency& norm_adj,
                   const EncoderParams& params, EncodeCache* cache) {
    const std::size_t d = fcn.dim();
    if (norm_adj.values.rows != d || params.gcn_w1.rows != d || params.gcn_w2.cols != d)
        throw invalid_input("gcn_forward: shape mismatch");

    Matrix ah0;
    la::matmul(norm_adj.values, fcn.values, ah0);
    Matrix z1;
    la::matmul(ah0, params.gcn_w1, z1);
    la::add_row_broadcast(z1, params.gcn_b1.row(0));
    Matrix h1(z1.rows, z1.cols);
    kern::relu(z1.data.data(), h1.data.data(), z1.size());

    Matrix ah1;
    la::matmul(norm_adj.values, h1, ah1);
    Matrix h2;
    la::matmul(ah1, params.gcn_w2, h2);
    la::add_row_broadcast(h2, params.gcn_b2.row(0));

    if (cache) {
        cache->h0 = fcn.values;
        cache->norm_adj = norm_adj.values;
        cache->ah0 = std::move(ah0);
        cache->z1 = std::move(z1);
        cache->h1 = h1;
        cache->ah1 = std::move(ah1);
        cache->h2 = h2;
    }
    return h2;
}

Matrix global_pool(const Matrix& node_matrix) {
    Matrix out(1, node_matrix.cols);
    la::colsum_acc(node_matrix, out.row(0));
    kern::scale(1.0 / static_cast<double>(node_matrix.rows), out.row(0), out.cols);
    return out;
}

FcnTokenSequence project_tokens(const RawTokens& raw, const EncoderParams& params,
                                EncodeCache* cache) {
    const std::size_t d = raw.roi.cols;
    if (params.proj_w1.rows != d) throw invalid_input("project_tokens: token dim mismatch");
    const std::size_t n_tokens = raw.roi.rows + raw.subnet.rows + raw.global.rows;

    Matrix stacked(n_tokens, d);
    std::size_t r = 0;
    for (const Matrix* part : {&raw.roi, &raw.subnet, &raw.global})
        for (std::size_t i = 0; i < part->rows; ++i, ++r)
            std::copy(part->row(i), part->row(i) + d, stacked.row(r));

    Matrix z;
    la::matmul(stacked, params.proj_w1, z);
    la::add_row_broadcast(z, params.proj_b1.row(0));
    Matrix h(z.rows, z.cols);
    kern::relu(z.data.data(), h.data.data(), z.size());
    FcnTokenSequence seq;
    la::matmul(h, params.proj_w2, seq.tokens);
    la::add_row_broadcast(seq.tokens, params.proj_b2.row(0));
    seq.roi_count = raw.roi.rows;
    seq.subnet_count = raw.subnet.rows;

    if (cache) {
        cache->raw = std::move(stacked);
        cache->proj_z = std::move(z);
        cache->proj_h = std::move(h);
    }
    return seq;
}

FcnTokenSequence encode(const FcnMatrix& fcn, const AtlasPartition& partition,
                        const EncoderParams& params, double tau, EncodeCache* cache) {
    RawTokens raw;
    raw.roi = extract_roi_tokens(fcn);
    raw.subnet = pool_subnetworks(raw.roi, partition);
    AdjacencyMatrix adj = threshold_adjacency(fcn, tau);
    NormalizedAdjacency norm = normalize_adjacency(adj);
    Matrix h2 = gcn_forward(fcn, norm, params, cache);
    raw.global = global_pool(h2);
    return project_tokens(raw, params, cache);
}

void encode_backward(const Matrix& d_tokens, const EncodeCache& cache,
                     const EncoderParams& params, EncoderParams& grads) {
    // Projector (shared across tokens).
    la::matmul_tn_acc(cache.proj_h, d_tokens, grads.proj_w2);
    la::colsum_acc(d_tokens, grads.proj_b2.row(0));
    Matrix d_proj_h;
    la::matmul_nt(d_tokens, params.proj_w2, d_proj_h);
    for (std::size_t i = 0; i < d_proj_h.size(); ++i)
        if (cache.proj_z.data[i] <= 0.0) d_proj_h.data[i] = 0.0;
    la::matmul_tn_acc(cache.raw, d_proj_h, grads.proj_w1);
    la::colsum_acc(d_proj_h, grads.proj_b1.row(0));

    Matrix d_raw;
    la::matmul_nt(d_proj_h, params.proj_w1, d_raw);

    // ROI and subnetwork tokens are functions of the FCN only; the single
    // global row reaches the GCN parameters through the mean pool.
    const std::size_t d = cache.h0.rows;
    const double* d_global = d_raw.row(d_raw.rows - 1);
    Matrix d_h2(d, cache.h2.cols);
    for (std::size_t i = 0; i < d; ++i)
        kern::axpy(1.0 / static_cast<double>(d), d_global, d_h2.row(i), d_h2.cols);

    la::matmul_tn_acc(cache.ah1, d_h2, grads.gcn_w2);
    la::colsum_acc(d_h2, grads.gcn_b2.row(0));
    Matrix d_ah1;
    la::matmul_nt(d_h2, params.gcn_w2, d_ah1);
    Matrix d_h1;
    la::matmul(cache.norm_adj, d_ah1, d_h1);  // norm_adj is symmetric
    for (std::size_t i = 0; i < d_h1.size(); ++i)
        if (cache.z1.data[i] <= 0.0) d_h1.data[i] = 0.0;
    la::matmul_tn_acc(cache.ah0, d_h1, grads.gcn_w1);
    la::colsum_acc(d_h1, grads.gcn_b1.row(0));
}

}  // namespace fcni
