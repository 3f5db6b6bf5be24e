#pragma once

// Synthetic cohort generation. Each subject gets attribute values drawn from
// configured marginals and a BOLD series sampled from a latent covariance
// with planted, subnetwork-localized blocks whose strength follows the
// subject's standardized attribute values.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fcni/fcn.hpp"

namespace fcni {

struct AttributeEffect {
    std::size_t subnet_a = 0;  // 1-based subnetwork ids
    std::size_t subnet_b = 0;
    double size = 0.0;  // covariance shift per unit standardized value
};

struct ValueBin {
    double lo = 0.0;
    double hi = 0.0;  // exclusive except for the last bin
    std::string name;
    double weight = 1.0;  // marginal sampling weight
};

struct AttributeDef {
    enum class Kind { categorical, continuous };

    std::string name;
    Kind kind = Kind::categorical;
    std::vector<std::string> labels;  // categorical
    double min = 0.0, max = 0.0;      // continuous
    std::vector<ValueBin> bins;       // optional binned marginal + judgment buckets
    std::optional<AttributeEffect> effect;

    void validate() const;
    bool is_categorical() const { return kind == Kind::categorical; }
};

struct AttrValue {
    bool is_label = false;
    std::string label;
    double num = 0.0;
};

struct CohortSpec {
    std::size_t n_subjects = 0;
    std::size_t timepoints = 0;
    AtlasPartition partition;
    std::vector<AttributeDef> attributes;
    double base_noise = 0.1;
    double split_ratio = 0.8;  // fraction of subjects tagged train
    std::uint64_t seed = 0;

    void validate() const;
    const AttributeDef* find_attribute(const std::string& name) const;
};

struct SubjectRecord {
    std::string subject_id;
    std::map<std::string, AttrValue> values;
    std::uint64_t seed = 0;
    std::string split = "train";
    std::string bold_path;
};

// Standardized effect weight of a value: continuous maps linearly onto
// [-1, 1]; categorical uses a one-vs-rest contrast against the first label
// (+1 / -1/(K-1)), which reduces to +/-1 for binary attributes.
double standardized_value(const AttributeDef& def, const AttrValue& value);

// Latent covariance for one subject; exposed for the planted-signal tests.
Matrix latent_covariance(const CohortSpec& spec, const SubjectRecord& record);

BoldSeries generate_subject(const CohortSpec& spec, const SubjectRecord& record,
                            std::uint64_t seed);

struct CohortManifest {
    std::vector<SubjectRecord> records;
};

// Draws attribute records, samples every BOLD series, writes bold/<id>.csv
// files plus manifest.jsonl under out_dir.
CohortManifest generate_cohort(const CohortSpec& spec, const std::filesystem::path& out_dir);

void write_cohort_manifest(const std::filesystem::path& path, const CohortManifest& manifest);
CohortManifest read_cohort_manifest(const std::filesystem::path& path);

// Lower-triangular Cholesky factor; empty when the matrix is not positive
// definite.
std::optional<Matrix> cholesky(const Matrix& m);

// The 19 default attributes: gender, age, handedness, diagnosis, three IQ
// scores and twelve phenotype scores.
std::vector<AttributeDef> default_attributes();

}  // namespace fcni
