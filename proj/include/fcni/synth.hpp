#pragma once

// Instruction-pair synthesis under the three paradigms. Judgment pairs
// alternate positive/negative, comparative pairs alternate yes/no and
// first/second, so emitted datasets are balanced by construction. Stage 1
// samples windowed connectivity files, stage 2 and evaluation only originals.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fcni/cohort.hpp"
#include "fcni/rng.hpp"

namespace fcni {

enum class Paradigm { predictive, judgment, comparative };

const char* paradigm_name(Paradigm p);
Paradigm paradigm_from_name(const std::string& name);

struct InstructionPair {
    std::string id;
    Paradigm paradigm = Paradigm::predictive;
    std::string attribute;
    std::vector<std::string> fcn_refs;  // 1 entry, or 2 for comparative
    std::string prompt;
    std::string answer;
    int stage = 1;
    std::string split = "train";
};

struct PromptTemplateSet {
    // keyed "<attribute>/<paradigm>"
    std::map<std::string, std::vector<std::string>> templates;

    const std::vector<std::string>& get(const std::string& attribute, Paradigm p) const;
    static PromptTemplateSet defaults(const std::vector<AttributeDef>& attrs);
    // Directory layout: <dir>/<attribute>/<paradigm>.txt, one template per line.
    static PromptTemplateSet load_dir(const std::filesystem::path& dir,
                                      const std::vector<AttributeDef>& attrs);
    void save_dir(const std::filesystem::path& dir) const;
    void validate(const std::vector<AttributeDef>& attrs) const;
    std::vector<std::string> vocabulary_words() const;
};

// round(100 * (x - min) / (max - min)) with ties rounded up; x is clipped
// into [min, max] first.
int normalize_value(double x, double min, double max);

// Judgment buckets: the attribute's own named bins when configured (age),
// otherwise width-10 segments of the normalized [0, 100] scale.
std::vector<ValueBin> buckets_for(const AttributeDef& def);

// Bucket index holding the attribute value; uses the raw value for binned
// attributes and the normalized value otherwise.
std::size_t bucket_of(const AttributeDef& def, double value);

// Canonical answer string for the predictive paradigm.
std::string predictive_answer(const AttributeDef& def, const AttrValue& value);

// One FCN file reference per subject as seen by the synthesizer.
struct FcnRef {
    std::string fcn_id;
    std::string subject_id;
    std::string path;
    bool windowed = false;
    std::size_t window_start = 0;
    std::string split = "train";
};

void write_fcn_manifest(const std::filesystem::path& path, const std::vector<FcnRef>& refs);
std::vector<FcnRef> read_fcn_manifest(const std::filesystem::path& path);

struct SynthRequest {
    int stage = 1;            // 1 = windowed refs, 2 = originals
    std::string split = "train";
    std::size_t n_predictive = 0;
    std::size_t n_judgment = 0;
    std::size_t n_comparative = 0;
    std::uint64_t seed = 0;
    int comparative_margin = 10;  // minimum normalized gap for continuous pairs
};

struct SynthResult {
    std::vector<InstructionPair> pairs;
    std::size_t shortfall_predictive = 0;
    std::size_t shortfall_judgment = 0;
    std::size_t shortfall_comparative = 0;

    std::size_t total_shortfall() const {
        return shortfall_predictive + shortfall_judgment + shortfall_comparative;
    }
};

InstructionPair make_predictive(const SubjectRecord& subject, const AttributeDef& def,
                                const PromptTemplateSet& templates, Rng& rng);

// Returns nothing when a negative candidate cannot be formed.
std::optional<InstructionPair> make_judgment(const SubjectRecord& subject,
                                             const AttributeDef& def,
                                             const PromptTemplateSet& templates, Rng& rng,
                                             bool want_positive);

std::optional<InstructionPair> make_comparative(const SubjectRecord& a, const SubjectRecord& b,
                                                const AttributeDef& def,
                                                const PromptTemplateSet& templates, Rng& rng,
                                                int margin);

SynthResult synth_dataset(const std::vector<SubjectRecord>& subjects,
                          const std::vector<FcnRef>& fcn_refs,
                          const std::vector<AttributeDef>& attributes,
                          const PromptTemplateSet& templates, const SynthRequest& request);

// Text-only pairs for language pretraining: the profile slot carries either a
// textual statement of the attribute value or a bare placeholder that maps to
// the learned null embedding.
std::vector<InstructionPair> synth_pretrain_pairs(const std::vector<SubjectRecord>& subjects,
                                                  const std::vector<AttributeDef>& attributes,
                                                  const PromptTemplateSet& templates,
                                                  std::size_t count, std::uint64_t seed,
                                                  int margin);

void write_pairs(const std::filesystem::path& path, const std::vector<InstructionPair>& pairs);
std::vector<InstructionPair> read_pairs(const std::filesystem::path& path);

// Every word that can appear in prompts or answers given these attributes
// and templates; feeds the tokenizer builder.
std::vector<std::string> vocabulary_words(const std::vector<AttributeDef>& attrs,
                                          const PromptTemplateSet& templates);

}  // namespace fcni
