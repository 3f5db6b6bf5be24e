#include "fcni/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include <json.hpp>

#include "fcni/error.hpp"
#include "fcni/io.hpp"
#include "fcni/rng.hpp"

namespace fcni {

using nlohmann::json;

void AttributeDef::validate() const {
    if (name.empty()) throw config_error("attribute with empty name");
    if (kind == Kind::categorical) {
        if (labels.empty()) throw config_error("attribute " + name + " has no labels");
        std::set<std::string> seen(labels.begin(), labels.end());
        if (seen.size() != labels.size())
            throw config_error("attribute " + name + " has duplicate labels");
    } else {
        if (!(min < max)) throw config_error("attribute " + name + " needs min < max");
        for (const auto& b : bins)
            if (!(b.lo < b.hi)) throw config_error("attribute " + name + " has an empty bin");
    }
}

void CohortSpec::validate() const {
    if (n_subjects < 2) throw config_error("cohort needs at least 2 subjects");
    if (timepoints < 2) throw config_error("cohort needs at least 2 time points");
    partition.validate();
    for (const auto& a : attributes) {
        a.validate();
        if (a.effect) {
            if (a.effect->subnet_a < 1 || a.effect->subnet_a > partition.subnet_count ||
                a.effect->subnet_b < 1 || a.effect->subnet_b > partition.subnet_count)
                throw config_error("attribute " + a.name +
                                   " plants an effect on a nonexistent subnetwork");
        }
    }
}

const AttributeDef* CohortSpec::find_attribute(const std::string& name) const {
    for (const auto& a : attributes)
        if (a.name == name) return &a;
    return nullptr;
}

double standardized_value(const AttributeDef& def, const AttrValue& value) {
    if (def.kind == AttributeDef::Kind::continuous) {
        double mid = 0.5 * (def.min + def.max);
        double half = 0.5 * (def.max - def.min);
        double s = (value.num - mid) / half;
        return std::clamp(s, -1.0, 1.0);
    }
    auto it = std::find(def.labels.begin(), def.labels.end(), value.label);
    if (it == def.labels.end())
        throw invalid_input("value '" + value.label + "' not a label of " + def.name);
    if (it == def.labels.begin()) return 1.0;
    return -1.0 / static_cast<double>(def.labels.size() - 1);
}

std::optional<Matrix> cholesky(const Matrix& m) {
    const std::size_t n = m.rows;
    Matrix l(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = m(i, j) - kern::dot(l.row(i), l.row(j), j);
            if (i == j) {
                if (s <= 0.0) return std::nullopt;
                l(i, i) = std::sqrt(s);
            } else {
                l(i, j) = s / l(j, j);
            }
        }
    }
    return l;
}

namespace {

// Shared base correlation: the normalized Gram matrix of a seeded Gaussian
// draw, blended with the identity by base_noise.
Matrix base_covariance(const CohortSpec& spec) {
    const std::size_t d = spec.partition.roi_count;
    Matrix base(d, d);
    for (std::size_t i = 0; i < d; ++i) base(i, i) = 1.0;
    if (spec.base_noise <= 0.0) return base;

    Rng rng(Rng::derive(spec.seed, 0x0b5eULL));
    Matrix g(d, d);
    for (auto& v : g.data) v = rng.normal();
    Matrix gram;
    la::matmul_nt(g, g, gram);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            double c = gram(i, j) / std::sqrt(gram(i, i) * gram(j, j));
            base(i, j) = (i == j) ? 1.0 : spec.base_noise * c;
        }
    return base;
}

}  // namespace

Matrix latent_covariance(const CohortSpec& spec, const SubjectRecord& record) {
    const std::size_t d = spec.partition.roi_count;
    Matrix sigma = base_covariance(spec);
    auto groups = spec.partition.members();

    for (const auto& def : spec.attributes) {
        if (!def.effect) continue;
        auto it = record.values.find(def.name);
        if (it == record.values.end()) continue;
        double shift = def.effect->size * standardized_value(def, it->second);
        const auto& sa = groups[def.effect->subnet_a - 1];
        const auto& sb = groups[def.effect->subnet_b - 1];
        for (std::size_t i : sa)
            for (std::size_t j : sb) {
                if (i == j) continue;
                sigma(i, j) += shift;
                sigma(j, i) = sigma(i, j);
            }
    }

    // Entry clip, then shrink toward the identity until Cholesky succeeds.
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            if (i == j)
                sigma(i, j) = 1.0;
            else
                sigma(i, j) = std::clamp(sigma(i, j), -0.99, 0.99);
        }
    for (double alpha : {1.0, 0.95, 0.9, 0.85, 0.8}) {
        Matrix trial = sigma;
        if (alpha < 1.0)
            for (std::size_t i = 0; i < d; ++i)
                for (std::size_t j = 0; j < d; ++j)
                    trial(i, j) = (i == j) ? 1.0 : alpha * sigma(i, j);
        if (cholesky(trial)) return trial;
    }
    double max_off = 0.0;
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j)
            if (i != j) max_off = std::max(max_off, std::fabs(sigma(i, j)));
    std::ostringstream msg;
    msg << "latent covariance for subject " << record.subject_id
        << " is not positive definite even after shrinking to 0.8 of the planted "
           "effects (max |off-diagonal| "
        << max_off << "); reduce effect sizes or target smaller subnetworks";
    throw generation_error(msg.str());
}

BoldSeries generate_subject(const CohortSpec& spec, const SubjectRecord& record,
                            std::uint64_t seed) {
    Matrix sigma = latent_covariance(spec, record);
    auto l = cholesky(sigma);
    if (!l) throw generation_error("covariance unexpectedly lost positive definiteness");

    const std::size_t d = spec.partition.roi_count;
    Rng rng(seed);
    Matrix z(spec.timepoints, d);
    for (auto& v : z.data) v = rng.normal();

    BoldSeries s;
    s.subject_id = record.subject_id;
    la::matmul_nt(z, *l, s.samples);  // rows are N(0, sigma)
    return s;
}

namespace {

AttrValue draw_value(const AttributeDef& def, Rng& rng) {
    AttrValue v;
    if (def.kind == AttributeDef::Kind::categorical) {
        v.is_label = true;
        v.label = def.labels[rng.index(def.labels.size())];
        return v;
    }
    if (!def.bins.empty()) {
        std::vector<double> w;
        for (const auto& b : def.bins) w.push_back(b.weight);
        const auto& bin = def.bins[rng.weighted_index(w)];
        v.num = rng.uniform(bin.lo, bin.hi);
    } else {
        v.num = rng.uniform(def.min, def.max);
    }
    return v;
}

json record_to_json(const SubjectRecord& r) {
    json attrs = json::object();
    for (const auto& [name, v] : r.values) {
        if (v.is_label)
            attrs[name] = v.label;
        else
            attrs[name] = v.num;
    }
    return json{{"subject_id", r.subject_id},
                {"attributes", attrs},
                {"bold_path", r.bold_path},
                {"split", r.split},
                {"seed", r.seed}};
}

SubjectRecord record_from_json(const json& j) {
    SubjectRecord r;
    r.subject_id = j.at("subject_id").get<std::string>();
    r.bold_path = j.at("bold_path").get<std::string>();
    r.split = j.at("split").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& [name, v] : j.at("attributes").items()) {
        AttrValue av;
        if (v.is_string()) {
            av.is_label = true;
            av.label = v.get<std::string>();
        } else {
            av.num = v.get<double>();
        }
        r.values[name] = av;
    }
    return r;
}

}  // namespace

CohortManifest generate_cohort(const CohortSpec& spec, const std::filesystem::path& out_dir) {
    spec.validate();
    std::filesystem::create_directories(out_dir / "bold");

    Rng rng(spec.seed);
    CohortManifest manifest;
    manifest.records.reserve(spec.n_subjects);

    int width = 1;
    for (std::size_t n = spec.n_subjects; n >= 10; n /= 10) ++width;
    for (std::size_t i = 0; i < spec.n_subjects; ++i) {
        SubjectRecord r;
        std::string num = std::to_string(i + 1);
        r.subject_id = "sub" + std::string(width - std::min<int>(width, num.size()), '0') + num;
        for (const auto& def : spec.attributes) r.values[def.name] = draw_value(def, rng);
        r.seed = Rng::derive(spec.seed, 0x5ab0ULL + i);
        r.bold_path = "bold/" + r.subject_id + ".csv";
        manifest.records.push_back(std::move(r));
    }

    // Exact train/test counts: shuffle indices and tag the head as train.
    std::vector<std::size_t> order(spec.n_subjects);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng split_rng(Rng::derive(spec.seed, 0x59711ULL));
    split_rng.shuffle(order);
    std::size_t n_train =
        static_cast<std::size_t>(std::lround(spec.split_ratio * static_cast<double>(spec.n_subjects)));
    for (std::size_t k = 0; k < order.size(); ++k)
        manifest.records[order[k]].split = k < n_train ? "train" : "test";

    for (const auto& r : manifest.records) {
        BoldSeries bold = generate_subject(spec, r, r.seed);
        write_bold_csv(out_dir / r.bold_path, bold, spec.partition.roi_names);
    }
    write_cohort_manifest(out_dir / "manifest.jsonl", manifest);
    return manifest;
}

void write_cohort_manifest(const std::filesystem::path& path, const CohortManifest& manifest) {
    std::string out;
    for (const auto& r : manifest.records) out += record_to_json(r).dump() + "\n";
    io::atomic_write_bytes(path, out);
}

CohortManifest read_cohort_manifest(const std::filesystem::path& path) {
    CohortManifest m;
    std::istringstream in(io::read_bytes(path));
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        m.records.push_back(record_from_json(json::parse(line)));
    }
    return m;
}

std::vector<AttributeDef> default_attributes() {
    std::vector<AttributeDef> out;

    AttributeDef gender;
    gender.name = "gender";
    gender.kind = AttributeDef::Kind::categorical;
    gender.labels = {"male", "female"};
    out.push_back(gender);

    // Five age bins; default weights follow the cohort composition the bins
    // were taken from.
    AttributeDef age;
    age.name = "age";
    age.kind = AttributeDef::Kind::continuous;
    age.min = 0.0;
    age.max = 100.0;
    age.bins = {{0.0, 10.0, "early childhood", 1200.0},
                {10.0, 19.0, "adolescence", 1994.0},
                {19.0, 40.0, "early adulthood", 3686.0},
                {40.0, 65.0, "middle adulthood", 761.0},
                {65.0, 100.0, "late adulthood", 112.0}};
    out.push_back(age);

    AttributeDef handedness;
    handedness.name = "handedness";
    handedness.kind = AttributeDef::Kind::categorical;
    handedness.labels = {"right", "left", "mixed"};
    out.push_back(handedness);

    AttributeDef diagnosis;
    diagnosis.name = "diagnosis";
    diagnosis.kind = AttributeDef::Kind::categorical;
    diagnosis.labels = {"hc", "asd", "adhd", "mdd", "sz", "other"};
    out.push_back(diagnosis);

    for (const char* iq : {"fiq", "viq", "piq"}) {
        AttributeDef a;
        a.name = iq;
        a.kind = AttributeDef::Kind::continuous;
        a.min = 50.0;
        a.max = 150.0;
        out.push_back(a);
    }

    for (const char* pheno : {"spatial", "reading", "stress", "aggression", "strength",
                              "endurance", "vocabulary", "memory", "hostility", "loneliness",
                              "purpose", "dexterity"}) {
        AttributeDef a;
        a.name = pheno;
        a.kind = AttributeDef::Kind::continuous;
        a.min = 0.0;
        a.max = 100.0;
        out.push_back(a);
    }
    return out;
}

}  // namespace fcni
