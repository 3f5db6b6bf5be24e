#pragma once

// Run configuration: a small sectioned key/value format ([section] headers,
// key = value lines, # comments). Defaults reproduce the reference constants
// (window 100/20, threshold 0.5, GCN hidden 256, batch 32, lr 1e-3 / 1e-5,
// one epoch, warmup 0.03, cosine decay, weight decay 0).

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fcni/cohort.hpp"
#include "fcni/training.hpp"

namespace fcni {

struct Ini {
    // section -> key -> raw value
    std::map<std::string, std::map<std::string, std::string>> sections;

    static Ini parse(const std::string& text);
    static Ini parse_file(const std::filesystem::path& path);

    bool has(const std::string& section, const std::string& key) const;
    std::string get_str(const std::string& section, const std::string& key,
                        const std::string& fallback) const;
    double get_double(const std::string& section, const std::string& key, double fallback) const;
    std::int64_t get_int(const std::string& section, const std::string& key,
                         std::int64_t fallback) const;
    std::uint64_t get_u64(const std::string& section, const std::string& key,
                          std::uint64_t fallback) const;
    bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
    std::vector<std::string> get_list(const std::string& section, const std::string& key) const;
};

struct SynthCounts {
    std::size_t predictive = 0;
    std::size_t judgment = 0;
    std::size_t comparative = 0;
};

struct RunConfig {
    // atlas
    std::size_t d = 116;
    std::size_t subnets = 7;
    std::string partition_file;

    // windowing + graph
    std::size_t window_length = 100;
    std::size_t window_step = 20;
    double tau = 0.5;

    // encoder
    std::size_t gcn_hidden = 256;
    std::size_t proj_hidden = 256;

    // language model
    std::size_t d_model = 64;
    std::size_t lm_blocks = 2;
    std::size_t lm_heads = 4;
    std::size_t ffn_hidden = 256;
    std::size_t max_seq = 512;

    // cohort
    std::size_t subjects = 40;
    std::size_t timepoints = 180;
    double base_noise = 0.1;
    double split_ratio = 0.8;
    std::vector<AttributeDef> attributes;

    // synthesis (defaults mirror the reference pair ratios at 1/1000 scale)
    SynthCounts stage1_counts{800, 800, 700};
    SynthCounts stage2_counts{38, 38, 350};
    SynthCounts test_counts{100, 200, 100};
    int comparative_margin = 10;
    std::string templates_dir;  // empty selects the built-in templates

    // pretraining
    std::size_t pretrain_pairs = 1800;
    std::size_t pretrain_epochs = 4;
    double pretrain_lr = 1e-3;

    // stage training
    TrainConfig stage1;
    TrainConfig stage2;

    // evaluation
    std::size_t eval_k = 1;
    double eval_temperature = 0.7;
    std::string eval_prompt_hint;  // inserted before the final answer cue
    std::size_t eval_max_items = 0;  // 0 = all

    // run-wide
    std::uint64_t seed = 1;
    std::size_t threads = 0;  // 0 = hardware concurrency
    bool deterministic = false;
    std::string out_dir = "out";

    // component seeds (derived from `seed` unless set explicitly)
    std::uint64_t cohort_seed = 0;
    std::uint64_t synth_seed = 0;
    std::uint64_t pretrain_seed = 0;
    std::uint64_t model_seed = 0;
    std::uint64_t eval_seed = 0;

    static RunConfig defaults();
    static RunConfig from_file(const std::filesystem::path& path);
    static RunConfig from_ini(const Ini& ini);

    void validate() const;
    AtlasPartition make_partition() const;
    CohortSpec cohort_spec() const;
    std::size_t effective_threads() const;
    std::string hash() const;
};

}  // namespace fcni
