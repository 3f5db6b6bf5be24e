#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fcni/cohort.hpp"
#include "fcni/error.hpp"
#include "fcni/io.hpp"
#include "test_util.hpp"

using namespace fcni;

namespace {

CohortSpec small_spec(std::size_t subjects, double effect, std::uint64_t seed,
                      AttributeDef::Kind kind = AttributeDef::Kind::categorical) {
    CohortSpec spec;
    spec.n_subjects = subjects;
    spec.timepoints = 60;
    spec.partition = AtlasPartition::make_default(8, 4);  // subnets of size 2
    spec.base_noise = 0.1;
    spec.seed = seed;

    AttributeDef attr;
    attr.name = "group";
    attr.kind = kind;
    if (kind == AttributeDef::Kind::categorical)
        attr.labels = {"group1", "group2"};
    else {
        attr.min = 0.0;
        attr.max = 100.0;
    }
    if (effect != 0.0) attr.effect = AttributeEffect{1, 2, effect};
    spec.attributes = {attr};
    return spec;
}

double block_mean_fc(const Matrix& fcn, const AtlasPartition& p, std::size_t a, std::size_t b) {
    auto groups = p.members();
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i : groups[a - 1])
        for (std::size_t j : groups[b - 1]) {
            if (i == j) continue;
            sum += fcn(i, j);
            ++n;
        }
    return sum / static_cast<double>(n);
}

}  // namespace

TEST_CASE("standardized values: continuous affine map, binary +/-1, one-vs-rest") {
    AttributeDef cont;
    cont.name = "score";
    cont.kind = AttributeDef::Kind::continuous;
    cont.min = 0.0;
    cont.max = 100.0;
    CHECK(standardized_value(cont, AttrValue{false, "", 0.0}) == -1.0);
    CHECK(standardized_value(cont, AttrValue{false, "", 100.0}) == 1.0);
    CHECK(standardized_value(cont, AttrValue{false, "", 50.0}) == 0.0);

    AttributeDef binary;
    binary.name = "g";
    binary.kind = AttributeDef::Kind::categorical;
    binary.labels = {"a", "b"};
    CHECK(standardized_value(binary, AttrValue{true, "a", 0}) == 1.0);
    CHECK(standardized_value(binary, AttrValue{true, "b", 0}) == -1.0);

    AttributeDef multi;
    multi.name = "m";
    multi.kind = AttributeDef::Kind::categorical;
    multi.labels = {"x", "y", "z"};
    CHECK(standardized_value(multi, AttrValue{true, "x", 0}) == 1.0);
    CHECK(standardized_value(multi, AttrValue{true, "y", 0}) == doctest::Approx(-0.5));
}

TEST_CASE("cholesky accepts spd matrices and rejects indefinite ones") {
    Matrix spd(2, 2);
    spd(0, 0) = 2.0;
    spd(1, 1) = 2.0;
    spd(0, 1) = spd(1, 0) = 1.0;
    auto l = cholesky(spd);
    REQUIRE(l.has_value());
    // L L^T = A
    Matrix back(2, 2);
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j)
            for (std::size_t k = 0; k < 2; ++k) back(i, j) += (*l)(i, k) * (*l)(j, k);
    CHECK(testutil::max_abs_diff(back, spd) < 1e-12);

    Matrix indef(2, 2);
    indef(0, 0) = 1.0;
    indef(1, 1) = 1.0;
    indef(0, 1) = indef(1, 0) = 2.0;
    CHECK(!cholesky(indef).has_value());
}

TEST_CASE("same seed and inputs give bit-identical series") {
    CohortSpec spec = small_spec(4, 0.4, 7);
    SubjectRecord r;
    r.subject_id = "s1";
    r.values["group"] = AttrValue{true, "group1", 0};
    BoldSeries a = generate_subject(spec, r, 99);
    BoldSeries b = generate_subject(spec, r, 99);
    CHECK(a.samples.data == b.samples.data);
    BoldSeries c = generate_subject(spec, r, 100);
    CHECK(a.samples.data != c.samples.data);
}

TEST_CASE("planted covariance shifts the target block by the standardized effect") {
    CohortSpec spec = small_spec(4, 0.3, 7);
    SubjectRecord pos, neg;
    pos.subject_id = "p";
    pos.values["group"] = AttrValue{true, "group1", 0};
    neg.subject_id = "n";
    neg.values["group"] = AttrValue{true, "group2", 0};

    Matrix cov_pos = latent_covariance(spec, pos);
    Matrix cov_neg = latent_covariance(spec, neg);
    double delta = block_mean_fc(cov_pos, spec.partition, 1, 2) -
                   block_mean_fc(cov_neg, spec.partition, 1, 2);
    CHECK(delta == doctest::Approx(0.6).epsilon(1e-9));  // +0.3 vs -0.3
    // Untargeted block is untouched.
    double other = block_mean_fc(cov_pos, spec.partition, 3, 4) -
                   block_mean_fc(cov_neg, spec.partition, 3, 4);
    CHECK(std::fabs(other) < 1e-12);
}

TEST_CASE("impossible covariances raise a generation error with diagnostics") {
    // Three singleton subnetworks with contradictory near-unit couplings:
    // (1,2) = +0.99, (2,3) = +0.99, (1,3) = -0.99 is far from PSD.
    CohortSpec spec;
    spec.n_subjects = 2;
    spec.timepoints = 10;
    spec.partition = AtlasPartition::make_default(3, 3);
    spec.base_noise = 0.0;
    spec.seed = 5;
    for (int i = 0; i < 3; ++i) {
        AttributeDef a;
        a.name = "e" + std::to_string(i);
        a.kind = AttributeDef::Kind::categorical;
        a.labels = {"on", "off"};
        a.effect = AttributeEffect{static_cast<std::size_t>(1 + i % 3),
                                   static_cast<std::size_t>(1 + (i + 1) % 3),
                                   i == 2 ? -2.0 : 2.0};
        spec.attributes.push_back(a);
    }
    SubjectRecord r;
    r.subject_id = "bad";
    for (int i = 0; i < 3; ++i) r.values["e" + std::to_string(i)] = AttrValue{true, "on", 0};
    try {
        generate_subject(spec, r, 1);
        FAIL("expected a generation error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::generation);
        CHECK(std::string(e.what()).find("positive definite") != std::string::npos);
    }
}

TEST_CASE("monte carlo: zero effect means no group difference, 0.4 separates groups") {
    const std::size_t n = 200;

    auto group_delta = [&](double effect) {
        CohortSpec spec = small_spec(n, effect, 11);
        double mean_pos = 0.0, mean_neg = 0.0;
        std::size_t n_pos = 0, n_neg = 0;
        Rng attr_rng(3);
        for (std::size_t i = 0; i < n; ++i) {
            SubjectRecord r;
            r.subject_id = "s" + std::to_string(i);
            bool positive = attr_rng.uniform01() < 0.5;
            r.values["group"] = AttrValue{true, positive ? "group1" : "group2", 0};
            BoldSeries bold = generate_subject(spec, r, Rng::derive(spec.seed, i));
            FcnMatrix fcn = pearson_fcn(bold);
            double block = block_mean_fc(fcn.values, spec.partition, 1, 2);
            if (positive) {
                mean_pos += block;
                ++n_pos;
            } else {
                mean_neg += block;
                ++n_neg;
            }
        }
        return mean_pos / n_pos - mean_neg / n_neg;
    };

    CHECK(std::fabs(group_delta(0.0)) < 0.05);
    CHECK(group_delta(0.4) > 0.1);
}

TEST_CASE("planted continuous signal is monotone in the attribute (spearman)") {
    const std::size_t n = 200;
    CohortSpec spec = small_spec(n, 0.3, 13, AttributeDef::Kind::continuous);

    std::vector<double> values, blocks;
    Rng attr_rng(5);
    for (std::size_t i = 0; i < n; ++i) {
        SubjectRecord r;
        r.subject_id = "s" + std::to_string(i);
        double v = attr_rng.uniform(0.0, 100.0);
        r.values["group"] = AttrValue{false, "", v};
        BoldSeries bold = generate_subject(spec, r, Rng::derive(spec.seed, i));
        FcnMatrix fcn = pearson_fcn(bold);
        values.push_back(v);
        blocks.push_back(block_mean_fc(fcn.values, spec.partition, 1, 2));
    }

    // Spearman rho via rank correlation.
    auto ranks = [](const std::vector<double>& xs) {
        std::vector<std::size_t> idx(xs.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
        std::vector<double> r(xs.size());
        for (std::size_t i = 0; i < idx.size(); ++i) r[idx[i]] = static_cast<double>(i);
        return r;
    };
    std::vector<double> rv = ranks(values), rb = ranks(blocks);
    double mx = (n - 1) / 2.0;
    double num = 0.0, dx = 0.0, dy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        num += (rv[i] - mx) * (rb[i] - mx);
        dx += (rv[i] - mx) * (rv[i] - mx);
        dy += (rb[i] - mx) * (rb[i] - mx);
    }
    double rho = num / std::sqrt(dx * dy);
    CHECK(rho > 0.3);
}

TEST_CASE("cohort generation: manifest cardinality, balance, determinism") {
    testutil::TempDir tmp("cohort");
    CohortSpec spec = small_spec(10, 0.2, 21);

    CohortManifest manifest = generate_cohort(spec, tmp.path / "a");
    CHECK(manifest.records.size() == 10);
    std::set<std::string> ids;
    for (const auto& r : manifest.records) {
        ids.insert(r.subject_id);
        CHECK(std::filesystem::exists(tmp.path / "a" / r.bold_path));
    }
    CHECK(ids.size() == 10);

    // Split ratio: 0.8 * 10 = 8 train.
    std::size_t train = 0;
    for (const auto& r : manifest.records)
        if (r.split == "train") ++train;
    CHECK(train == 8);

    // Byte-identical rerun.
    generate_cohort(spec, tmp.path / "b");
    CHECK(io::read_bytes(tmp.path / "a" / "manifest.jsonl") ==
          io::read_bytes(tmp.path / "b" / "manifest.jsonl"));
    CHECK(io::read_bytes(tmp.path / "a" / manifest.records[0].bold_path) ==
          io::read_bytes(tmp.path / "b" / manifest.records[0].bold_path));

    // Manifest round-trip.
    CohortManifest back = read_cohort_manifest(tmp.path / "a" / "manifest.jsonl");
    REQUIRE(back.records.size() == 10);
    CHECK(back.records[3].subject_id == manifest.records[3].subject_id);
    CHECK(back.records[3].split == manifest.records[3].split);
    CHECK(back.records[3].values.at("group").label ==
          manifest.records[3].values.at("group").label);
}

TEST_CASE("categorical marginals stay within 3 sigma binomial bounds") {
    testutil::TempDir tmp("marginal");
    CohortSpec spec = small_spec(1000, 0.0, 31);
    spec.timepoints = 4;  // keep sampling cheap; we only count labels
    CohortManifest manifest = generate_cohort(spec, tmp.path);
    std::size_t count = 0;
    for (const auto& r : manifest.records)
        if (r.values.at("group").label == "group1") ++count;
    double sigma = std::sqrt(1000 * 0.25);
    CHECK(std::fabs(static_cast<double>(count) - 500.0) <= 3.0 * sigma);
}

TEST_CASE("binned marginals follow the configured weights") {
    AttributeDef age;
    age.name = "age";
    age.kind = AttributeDef::Kind::continuous;
    age.min = 0.0;
    age.max = 100.0;
    age.bins = {{0, 10, "young", 0.0}, {10, 100, "old", 1.0}};  // all mass in one bin
    Rng rng(9);
    CohortSpec spec;
    spec.n_subjects = 50;
    spec.timepoints = 4;
    spec.partition = AtlasPartition::make_default(4, 2);
    spec.attributes = {age};
    spec.seed = 17;
    testutil::TempDir tmp("bins");
    CohortManifest m = generate_cohort(spec, tmp.path);
    for (const auto& r : m.records) CHECK(r.values.at("age").num >= 10.0);
}

TEST_CASE("default attribute set has the expected shape") {
    auto attrs = default_attributes();
    CHECK(attrs.size() == 19);
    std::size_t categorical = 0;
    bool has_age_bins = false;
    for (const auto& a : attrs) {
        a.validate();
        if (a.is_categorical()) ++categorical;
        if (a.name == "age") has_age_bins = a.bins.size() == 5;
    }
    CHECK(categorical == 3);  // gender, handedness, diagnosis
    CHECK(has_age_bins);
}
