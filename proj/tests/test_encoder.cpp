#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fcni/encoder.hpp"
#include "fcni/error.hpp"
#include "fcni/rng.hpp"
#include "test_util.hpp"

using namespace fcni;

namespace {

FcnMatrix random_fcn(std::size_t d, std::uint64_t seed) {
    Rng rng(seed);
    BoldSeries s;
    s.subject_id = "s";
    s.samples = testutil::random_matrix(24, d, rng);
    return pearson_fcn(s);
}

}  // namespace

TEST_CASE("roi tokens are the matrix rows (and columns, by symmetry)") {
    FcnMatrix fcn = random_fcn(5, 1);
    Matrix tokens = extract_roi_tokens(fcn);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 5; ++j) {
            CHECK(tokens(i, j) == fcn.values(i, j));
            CHECK(tokens(i, j) == fcn.values(j, i));
        }

    FcnMatrix eye;
    eye.values = Matrix(3, 3);
    for (std::size_t i = 0; i < 3; ++i) eye.values(i, i) = 1.0;
    Matrix basis = extract_roi_tokens(eye);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) CHECK(basis(i, j) == (i == j ? 1.0 : 0.0));
}

TEST_CASE("subnetwork pooling equals the loop mean, constants and singletons included") {
    Rng rng(2);
    Matrix tokens = testutil::random_matrix(7, 7, rng);
    AtlasPartition p;
    p.roi_count = 7;
    p.subnet_count = 3;
    p.roi_names = {"a", "b", "c", "d", "e", "f", "g"};
    p.subnet_of = {1, 1, 2, 2, 2, 3, AtlasPartition::kUnassigned};
    p.validate();

    Matrix pooled = pool_subnetworks(tokens, p);
    REQUIRE(pooled.rows == 3);

    // Loop oracle.
    for (std::size_t j = 0; j < 7; ++j) {
        CHECK(std::fabs(pooled(0, j) - 0.5 * (tokens(0, j) + tokens(1, j))) < 1e-12);
        CHECK(std::fabs(pooled(1, j) -
                        (tokens(2, j) + tokens(3, j) + tokens(4, j)) / 3.0) < 1e-12);
        CHECK(pooled(2, j) == tokens(5, j));  // singleton
    }

    // All-equal tokens pool to that same vector.
    Matrix constant(7, 4);
    for (std::size_t i = 0; i < 7; ++i)
        for (std::size_t j = 0; j < 4; ++j) constant(i, j) = 3.25 - static_cast<double>(j);
    Matrix cp = pool_subnetworks(constant, p);
    for (std::size_t k = 0; k < 3; ++k)
        for (std::size_t j = 0; j < 4; ++j) CHECK(cp(k, j) == doctest::Approx(constant(0, j)));
}

TEST_CASE("pooling is invariant under permuting rois inside a subnetwork") {
    Rng rng(3);
    Matrix tokens = testutil::random_matrix(6, 6, rng);
    AtlasPartition p;
    p.roi_count = 6;
    p.subnet_count = 2;
    p.roi_names = {"a", "b", "c", "d", "e", "f"};
    p.subnet_of = {1, 1, 1, 2, 2, 2};

    Matrix before = pool_subnetworks(tokens, p);
    Matrix swapped = tokens;
    for (std::size_t j = 0; j < 6; ++j) std::swap(swapped(0, j), swapped(2, j));
    Matrix after = pool_subnetworks(swapped, p);
    CHECK(testutil::max_abs_diff(before, after) < 1e-15);
}

TEST_CASE("gcn forward: constant path, identity adjacency, dense oracle") {
    const std::size_t d = 4, h = 5;
    EncoderConfig cfg{d, h, 3, 2};
    Rng rng(11);

    FcnMatrix fcn = random_fcn(d, 7);
    AdjacencyMatrix empty;
    empty.values = Matrix(d, d);
    NormalizedAdjacency eye = normalize_adjacency(empty);  // identity

    SUBCASE("all-zero weights leave only the bias") {
        EncoderParams params = EncoderParams::init(cfg, 1);
        params.gcn_w1.fill(0.0);
        params.gcn_w2.fill(0.0);
        params.gcn_b1.fill(0.0);
        for (std::size_t j = 0; j < d; ++j) params.gcn_b2(0, j) = 0.5 + static_cast<double>(j);
        Matrix out = gcn_forward(fcn, eye, params);
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) CHECK(out(i, j) == params.gcn_b2(0, j));
    }

    SUBCASE("identity adjacency reduces to a per-node two-layer perceptron") {
        EncoderParams params = EncoderParams::init(cfg, 2);
        Matrix out = gcn_forward(fcn, eye, params);
        for (std::size_t i = 0; i < d; ++i) {
            // Per-node oracle: row -> relu(row W1 + b1) W2 + b2.
            std::vector<double> hidden(h, 0.0);
            for (std::size_t k = 0; k < h; ++k) {
                double z = params.gcn_b1(0, k);
                for (std::size_t j = 0; j < d; ++j) z += fcn.values(i, j) * params.gcn_w1(j, k);
                hidden[k] = std::max(0.0, z);
            }
            for (std::size_t j = 0; j < d; ++j) {
                double z = params.gcn_b2(0, j);
                for (std::size_t k = 0; k < h; ++k) z += hidden[k] * params.gcn_w2(k, j);
                CHECK(std::fabs(out(i, j) - z) < 1e-12);
            }
        }
    }

    SUBCASE("random instance equals the dense matrix-product oracle") {
        EncoderParams params = EncoderParams::init(cfg, 3);
        AdjacencyMatrix adj = threshold_adjacency(fcn, 0.3);
        NormalizedAdjacency norm = normalize_adjacency(adj);
        Matrix out = gcn_forward(fcn, norm, params);

        auto dense_mm = [](const Matrix& a, const Matrix& b) {
            Matrix c(a.rows, b.cols);
            for (std::size_t i = 0; i < a.rows; ++i)
                for (std::size_t j = 0; j < b.cols; ++j)
                    for (std::size_t k = 0; k < a.cols; ++k) c(i, j) += a(i, k) * b(k, j);
            return c;
        };
        Matrix z1 = dense_mm(dense_mm(norm.values, fcn.values), params.gcn_w1);
        for (std::size_t i = 0; i < z1.rows; ++i)
            for (std::size_t k = 0; k < z1.cols; ++k)
                z1(i, k) = std::max(0.0, z1(i, k) + params.gcn_b1(0, k));
        Matrix z2 = dense_mm(dense_mm(norm.values, z1), params.gcn_w2);
        for (std::size_t i = 0; i < z2.rows; ++i)
            for (std::size_t j = 0; j < z2.cols; ++j) z2(i, j) += params.gcn_b2(0, j);
        CHECK(testutil::max_abs_diff(out, z2) < 1e-10);
    }

    SUBCASE("shape mismatch is rejected") {
        EncoderParams params = EncoderParams::init(EncoderConfig{d + 1, h, 3, 2}, 4);
        AdjacencyMatrix adj = threshold_adjacency(fcn, 0.3);
        NormalizedAdjacency norm = normalize_adjacency(adj);
        CHECK_THROWS_AS(gcn_forward(fcn, norm, params), Error);
    }
}

TEST_CASE("global pool is the arithmetic row mean") {
    Rng rng(4);
    Matrix rows = testutil::random_matrix(6, 5, rng);
    Matrix mean = global_pool(rows);
    for (std::size_t j = 0; j < 5; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < 6; ++i) s += rows(i, j);
        CHECK(std::fabs(mean(0, j) - s / 6.0) < 1e-12);
    }

    // Paired +/- rows cancel.
    Matrix pm(4, 3);
    for (std::size_t j = 0; j < 3; ++j) {
        pm(0, j) = 1.5 * (j + 1);
        pm(1, j) = -pm(0, j);
        pm(2, j) = -0.25;
        pm(3, j) = 0.25;
    }
    Matrix zero = global_pool(pm);
    for (double v : zero.data) CHECK(std::fabs(v) < 1e-15);
}

TEST_CASE("projector: zero weights broadcast the bias; dense oracle on random params") {
    EncoderConfig cfg{4, 5, 3, 2};
    Rng rng(6);
    RawTokens raw;
    raw.roi = testutil::random_matrix(4, 4, rng);
    raw.subnet = testutil::random_matrix(2, 4, rng);
    raw.global = testutil::random_matrix(1, 4, rng);

    SUBCASE("zero weights") {
        EncoderParams params = EncoderParams::init(cfg, 1);
        params.proj_w1.fill(0.0);
        params.proj_w2.fill(0.0);
        params.proj_b2(0, 0) = -1.5;
        params.proj_b2(0, 1) = 2.5;
        FcnTokenSequence seq = project_tokens(raw, params);
        REQUIRE(seq.count() == 7);
        for (std::size_t t = 0; t < 7; ++t) {
            CHECK(seq.tokens(t, 0) == -1.5);
            CHECK(seq.tokens(t, 1) == 2.5);
        }
    }

    SUBCASE("random params match the explicit two-matrix-product oracle per token") {
        EncoderParams params = EncoderParams::init(cfg, 2);
        FcnTokenSequence seq = project_tokens(raw, params);
        auto check_token = [&](const double* x, std::size_t t) {
            std::vector<double> hidden(cfg.proj_hidden);
            for (std::size_t k = 0; k < cfg.proj_hidden; ++k) {
                double z = params.proj_b1(0, k);
                for (std::size_t j = 0; j < cfg.d; ++j) z += x[j] * params.proj_w1(j, k);
                hidden[k] = std::max(0.0, z);
            }
            for (std::size_t o = 0; o < cfg.d_model; ++o) {
                double z = params.proj_b2(0, o);
                for (std::size_t k = 0; k < cfg.proj_hidden; ++k)
                    z += hidden[k] * params.proj_w2(k, o);
                CHECK(std::fabs(seq.tokens(t, o) - z) < 1e-10);
            }
        };
        for (std::size_t i = 0; i < 4; ++i) check_token(raw.roi.row(i), i);
        for (std::size_t i = 0; i < 2; ++i) check_token(raw.subnet.row(i), 4 + i);
        check_token(raw.global.row(0), 6);
    }

    SUBCASE("identity configuration passes tokens through") {
        // d_model = D, W2*W1 = I on the positive orthant: use W1 = I scaled,
        // W2 = I scaled back, b = 0, and non-negative inputs.
        EncoderConfig icfg{3, 3, 3, 3};
        EncoderParams params = EncoderParams::init(icfg, 3);
        params.proj_w1.fill(0.0);
        params.proj_w2.fill(0.0);
        params.proj_b1.fill(0.0);
        params.proj_b2.fill(0.0);
        for (std::size_t i = 0; i < 3; ++i) {
            params.proj_w1(i, i) = 1.0;
            params.proj_w2(i, i) = 1.0;
        }
        RawTokens pos;
        pos.roi = Matrix(3, 3);
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 3; ++j) pos.roi(i, j) = 0.25 + static_cast<double>(i + j);
        pos.subnet = Matrix(1, 3, 0.5);
        pos.global = Matrix(1, 3, 1.5);
        FcnTokenSequence seq = project_tokens(pos, params);
        for (std::size_t j = 0; j < 3; ++j) {
            CHECK(seq.tokens(0, j) == pos.roi(0, j));
            CHECK(seq.tokens(3, j) == 0.5);
            CHECK(seq.tokens(4, j) == 1.5);
        }
    }
}

TEST_CASE("encode emits D+N+1 tokens in roi, subnet, global order") {
    SUBCASE("paper dimensions give 124 tokens") {
        EncoderConfig cfg{116, 16, 8, 4};  // narrow hidden dims keep this fast
        EncoderParams params = EncoderParams::init(cfg, 1);
        AtlasPartition p = AtlasPartition::make_default(116, 7);
        FcnMatrix fcn = random_fcn(116, 5);
        FcnTokenSequence seq = encode(fcn, p, params, 0.5);
        CHECK(seq.count() == 124);
        CHECK(seq.roi_count == 116);
        CHECK(seq.subnet_count == 7);
    }

    SUBCASE("small instance matches the chained component oracles") {
        EncoderConfig cfg{4, 5, 3, 2};
        EncoderParams params = EncoderParams::init(cfg, 2);
        AtlasPartition p = AtlasPartition::make_default(4, 2);
        FcnMatrix fcn = random_fcn(4, 8);
        FcnTokenSequence seq = encode(fcn, p, params, 0.5);
        REQUIRE(seq.count() == 7);

        RawTokens raw;
        raw.roi = extract_roi_tokens(fcn);
        raw.subnet = pool_subnetworks(raw.roi, p);
        raw.global = global_pool(
            gcn_forward(fcn, normalize_adjacency(threshold_adjacency(fcn, 0.5)), params));
        FcnTokenSequence expected = project_tokens(raw, params);
        CHECK(testutil::max_abs_diff(seq.tokens, expected.tokens) < 1e-12);
    }
}

TEST_CASE("encode is equivariant under consistent roi permutation") {
    EncoderConfig cfg{6, 4, 3, 3};
    EncoderParams params = EncoderParams::init(cfg, 9);
    AtlasPartition p;
    p.roi_count = 6;
    p.subnet_count = 2;
    p.roi_names = {"a", "b", "c", "d", "e", "f"};
    p.subnet_of = {1, 1, 1, 2, 2, 2};
    FcnMatrix fcn = random_fcn(6, 13);

    // Permutation swapping rois 0<->1 (within subnet 1) and 3<->5 (within 2).
    std::vector<std::size_t> perm = {1, 0, 2, 5, 4, 3};
    FcnMatrix permuted;
    permuted.values = Matrix(6, 6);
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 6; ++j)
            permuted.values(i, j) = fcn.values(perm[i], perm[j]);

    // The encoder weights must be permuted consistently in their input
    // dimension (token coordinates are roi-indexed).
    EncoderParams pparams = params;
    for (std::size_t j = 0; j < 6; ++j)
        for (std::size_t k = 0; k < cfg.gcn_hidden; ++k)
            pparams.gcn_w1(j, k) = params.gcn_w1(perm[j], k);
    for (std::size_t k = 0; k < cfg.gcn_hidden; ++k)
        for (std::size_t j = 0; j < 6; ++j)
            pparams.gcn_w2(k, j) = params.gcn_w2(k, perm[j]);
    for (std::size_t j = 0; j < 6; ++j) pparams.gcn_b2(0, j) = params.gcn_b2(0, perm[j]);
    for (std::size_t j = 0; j < 6; ++j)
        for (std::size_t k = 0; k < cfg.proj_hidden; ++k)
            pparams.proj_w1(j, k) = params.proj_w1(perm[j], k);

    FcnTokenSequence base = encode(fcn, p, params, 0.4);
    FcnTokenSequence mapped = encode(permuted, p, pparams, 0.4);

    // ROI token i of the permuted input equals ROI token perm[i] of the base.
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t o = 0; o < cfg.d_model; ++o)
            CHECK(std::fabs(mapped.tokens(i, o) - base.tokens(perm[i], o)) < 1e-9);
    // Subnet and global tokens are unchanged (permutation stays inside groups).
    for (std::size_t t = 6; t < 9; ++t)
        for (std::size_t o = 0; o < cfg.d_model; ++o)
            CHECK(std::fabs(mapped.tokens(t, o) - base.tokens(t, o)) < 1e-9);
}
