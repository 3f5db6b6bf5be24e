#pragma once

// End-to-end orchestration shared by the CLI and the acceptance suite:
// cohort -> fcn -> synth -> pretrain-lm -> train (stage 1/2) -> eval /
// biomarker / gradcheck. Every step is deterministic given the config and
// writes its artifacts under <out>/<step>/.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fcni/biomarker.hpp"
#include "fcni/config.hpp"
#include "fcni/evalkit.hpp"
#include "fcni/synth.hpp"
#include "fcni/training.hpp"

namespace fcni::pipeline {

namespace fs = std::filesystem;

struct Layout {
    fs::path out;

    fs::path cohort_dir() const { return out / "cohort"; }
    fs::path cohort_manifest() const { return cohort_dir() / "manifest.jsonl"; }
    fs::path fcn_dir() const { return out / "fcn"; }
    fs::path fcn_manifest() const { return fcn_dir() / "manifest.jsonl"; }
    fs::path synth_dir() const { return out / "synth"; }
    fs::path pairs_file(const std::string& name) const { return synth_dir() / (name + ".jsonl"); }
    fs::path ckpt_dir(const std::string& name) const { return out / "ckpt" / name; }
    fs::path log_file(const std::string& name) const { return out / "logs" / (name + ".jsonl"); }
    fs::path eval_dir() const { return out / "eval"; }
    fs::path biomarker_dir() const { return out / "biomarker"; }
};

Layout layout_of(const RunConfig& config);

// Loads FCN matrices referenced by instruction pairs, keyed by the path
// stored in the manifest (relative to the fcn directory).
class FcnStore {
public:
    FcnStore(fs::path base_dir) : base_(std::move(base_dir)) {}
    const FcnMatrix& get(const std::string& rel_path);

private:
    fs::path base_;
    std::map<std::string, FcnMatrix> cache_;
};

CohortManifest run_cohort(const RunConfig& config);

// Builds the original FCN per subject plus its sliding-window FCNs and the
// manifest the synthesizer consumes.
std::vector<FcnRef> run_fcn(const RunConfig& config);

struct SynthReport {
    SynthResult stage1;
    SynthResult stage2;
    SynthResult test;

    std::size_t total_shortfall() const {
        return stage1.total_shortfall() + stage2.total_shortfall() + test.total_shortfall();
    }
};

SynthReport run_synth(const RunConfig& config);

PromptTemplateSet templates_of(const RunConfig& config);
Tokenizer tokenizer_of(const RunConfig& config);

// Text-only pretraining of the toy LM; writes ckpt/pretrain.
TrainSummary run_pretrain(const RunConfig& config);

// stage = 1 trains the encoder against the frozen pretrained LM on windowed
// pairs; stage = 2 trains everything jointly on original-FCN pairs.
TrainSummary run_train(const RunConfig& config, int stage);

std::vector<TrainExample> to_examples(const std::vector<InstructionPair>& pairs,
                                      const Tokenizer& tokenizer, FcnStore& store);

struct EvalOptions {
    std::string checkpoint = "stage2";  // name under ckpt/
    std::string pairs_file = "test";
};

std::vector<MetricReport> run_eval(const RunConfig& config, const EvalOptions& options = {});

struct BiomarkerOptions {
    std::string checkpoint = "stage2";
    std::string pairs_file = "test";
    std::string attribute;              // optional filter
    std::vector<std::string> subjects;  // optional subject-id filter
};

struct BiomarkerResult {
    SaliencyVector saliency;  // mean over items
    Matrix token_map;         // mean over items
    Matrix subnet_map;
    std::size_t items = 0;
};

BiomarkerResult run_biomarker(const RunConfig& config, const BiomarkerOptions& options = {});

// Finite-difference suite on a micro instance (d_model 16, 2 blocks); checks
// every trainable tensor of both halves.
GradCheckReport run_gradcheck(std::uint64_t seed = 1);

// Decodes one instruction pair k times with the given model (greedy for
// k == 1, temperature sampling otherwise). Shared by eval and tests.
std::vector<std::string> sample_responses(const Model& model, const InstructionPair& pair,
                                          FcnStore& store, std::size_t k, double temperature,
                                          std::uint64_t seed, const std::string& prompt_hint);

}  // namespace fcni::pipeline
