#include "fcni/pipeline.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "fcni/error.hpp"
#include "fcni/io.hpp"
#include "fcni/rng.hpp"

namespace fcni::pipeline {

Layout layout_of(const RunConfig& config) { return Layout{fs::path(config.out_dir)}; }

const FcnMatrix& FcnStore::get(const std::string& rel_path) {
    auto it = cache_.find(rel_path);
    if (it != cache_.end()) return it->second;
    fs::path full = base_ / rel_path;
    if (!fs::exists(full)) throw dataset_error("referenced FCN file missing: " + full.string());
    FcnMatrix m;
    m.values = io::read_fcn(full);
    return cache_.emplace(rel_path, std::move(m)).first->second;
}

CohortManifest run_cohort(const RunConfig& config) {
    return generate_cohort(config.cohort_spec(), layout_of(config).cohort_dir());
}

std::vector<FcnRef> run_fcn(const RunConfig& config) {
    Layout paths = layout_of(config);
    CohortManifest manifest = read_cohort_manifest(paths.cohort_manifest());
    fs::create_directories(paths.fcn_dir());

    std::vector<FcnRef> refs;
    for (const auto& record : manifest.records) {
        BoldSeries bold =
            read_bold_csv(paths.cohort_dir() / record.bold_path, record.subject_id);

        FcnMatrix original = pearson_fcn(bold);
        std::string original_name = record.subject_id + ".fcn";
        io::write_fcn(paths.fcn_dir() / original_name, original.values);
        refs.push_back({record.subject_id, record.subject_id, original_name, false, 0,
                        record.split});

        for (const auto& window : sliding_windows(bold, config.window_length, config.window_step)) {
            FcnMatrix wfcn = pearson_fcn(window);
            std::string name = window.subject_id + ".fcn";
            io::write_fcn(paths.fcn_dir() / name, wfcn.values);
            refs.push_back({window.subject_id, record.subject_id, name, true,
                            window.window_origin->start, record.split});
        }
    }
    write_fcn_manifest(paths.fcn_manifest(), refs);
    return refs;
}

PromptTemplateSet templates_of(const RunConfig& config) {
    if (!config.templates_dir.empty())
        return PromptTemplateSet::load_dir(config.templates_dir, config.attributes);
    return PromptTemplateSet::defaults(config.attributes);
}

Tokenizer tokenizer_of(const RunConfig& config) {
    return Tokenizer::build(vocabulary_words(config.attributes, templates_of(config)));
}

SynthReport run_synth(const RunConfig& config) {
    Layout paths = layout_of(config);
    CohortManifest manifest = read_cohort_manifest(paths.cohort_manifest());
    std::vector<FcnRef> refs = read_fcn_manifest(paths.fcn_manifest());
    PromptTemplateSet templates = templates_of(config);
    const std::uint64_t seed = config.synth_seed ? config.synth_seed : Rng::derive(config.seed, 2);

    SynthReport report;
    SynthRequest request;
    request.comparative_margin = config.comparative_margin;

    request.stage = 1;
    request.split = "train";
    request.n_predictive = config.stage1_counts.predictive;
    request.n_judgment = config.stage1_counts.judgment;
    request.n_comparative = config.stage1_counts.comparative;
    request.seed = Rng::derive(seed, 1);
    report.stage1 = synth_dataset(manifest.records, refs, config.attributes, templates, request);
    write_pairs(paths.pairs_file("stage1"), report.stage1.pairs);

    request.stage = 2;
    request.n_predictive = config.stage2_counts.predictive;
    request.n_judgment = config.stage2_counts.judgment;
    request.n_comparative = config.stage2_counts.comparative;
    request.seed = Rng::derive(seed, 2);
    report.stage2 = synth_dataset(manifest.records, refs, config.attributes, templates, request);
    write_pairs(paths.pairs_file("stage2"), report.stage2.pairs);

    request.stage = 2;  // evaluation uses original FCNs
    request.split = "test";
    request.n_predictive = config.test_counts.predictive;
    request.n_judgment = config.test_counts.judgment;
    request.n_comparative = config.test_counts.comparative;
    request.seed = Rng::derive(seed, 3);
    report.test = synth_dataset(manifest.records, refs, config.attributes, templates, request);
    write_pairs(paths.pairs_file("test"), report.test.pairs);
    return report;
}

std::vector<TrainExample> to_examples(const std::vector<InstructionPair>& pairs,
                                      const Tokenizer& tokenizer, FcnStore& store) {
    std::vector<TrainExample> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) {
        TrainExample ex;
        ex.prompt_ids = tokenizer.tokenize(p.prompt);
        ex.answer_ids = tokenizer.tokenize(p.answer);
        for (const auto& ref : p.fcn_refs) ex.fcns.push_back(&store.get(ref));
        out.push_back(std::move(ex));
    }
    return out;
}

namespace {

Model init_model(const RunConfig& config, const Tokenizer& tokenizer) {
    Model model;
    model.tokenizer = tokenizer;
    model.partition = config.make_partition();
    model.tau = config.tau;

    EncoderConfig ec;
    ec.d = config.d;
    ec.gcn_hidden = config.gcn_hidden;
    ec.proj_hidden = config.proj_hidden;
    ec.d_model = config.d_model;
    const std::uint64_t mseed = config.model_seed ? config.model_seed : Rng::derive(config.seed, 7);
    model.encoder = EncoderParams::init(ec, Rng::derive(mseed, 1));

    LmConfig lc;
    lc.d_model = config.d_model;
    lc.blocks = config.lm_blocks;
    lc.heads = config.lm_heads;
    lc.ffn_hidden = config.ffn_hidden;
    lc.max_seq = config.max_seq;
    lc.vocab = static_cast<std::size_t>(tokenizer.vocab_size());
    model.lm = LmParams::init(lc, Rng::derive(mseed, 2));
    return model;
}

}  // namespace

TrainSummary run_pretrain(const RunConfig& config) {
    Layout paths = layout_of(config);
    CohortManifest manifest = read_cohort_manifest(paths.cohort_manifest());
    std::vector<SubjectRecord> train_subjects;
    for (const auto& r : manifest.records)
        if (r.split == "train") train_subjects.push_back(r);

    PromptTemplateSet templates = templates_of(config);
    Tokenizer tokenizer = tokenizer_of(config);
    Model model = init_model(config, tokenizer);

    const std::uint64_t seed =
        config.pretrain_seed ? config.pretrain_seed : Rng::derive(config.seed, 3);
    std::vector<InstructionPair> pairs =
        synth_pretrain_pairs(train_subjects, config.attributes, templates, config.pretrain_pairs,
                             seed, config.comparative_margin);
    write_pairs(paths.pairs_file("pretrain"), pairs);

    FcnStore store(paths.fcn_dir());  // pretraining pairs carry no FCN refs
    std::vector<TrainExample> examples = to_examples(pairs, tokenizer, store);

    TrainConfig tc;
    tc.stage = 0;
    tc.learning_rate = config.pretrain_lr;
    tc.batch_size = config.stage1.batch_size;
    tc.epochs = config.pretrain_epochs;
    tc.warmup_ratio = config.stage1.warmup_ratio;
    tc.weight_decay = 0.0;
    tc.seed = Rng::derive(seed, 9);
    tc.deterministic = config.deterministic;
    tc.threads = config.effective_threads();

    TrainSummary summary = train(model, examples, tc, paths.log_file("pretrain"));
    save_checkpoint(paths.ckpt_dir("pretrain"), model, 0, summary.steps, config.hash());
    return summary;
}

TrainSummary run_train(const RunConfig& config, int stage) {
    if (stage != 1 && stage != 2) throw invalid_input("train stage must be 1 or 2");
    Layout paths = layout_of(config);
    const std::string from = stage == 1 ? "pretrain" : "stage1";
    if (!fs::exists(paths.ckpt_dir(from) / "meta.txt"))
        throw dataset_error("checkpoint '" + from + "' not found; run the previous step first");
    Model model = load_checkpoint(paths.ckpt_dir(from));

    auto pairs = read_pairs(paths.pairs_file(stage == 1 ? "stage1" : "stage2"));
    FcnStore store(paths.fcn_dir());
    std::vector<TrainExample> examples = to_examples(pairs, model.tokenizer, store);

    TrainConfig tc = stage == 1 ? config.stage1 : config.stage2;
    tc.stage = stage;
    tc.seed = Rng::derive(config.seed, 0x50 + static_cast<std::uint64_t>(stage));
    tc.deterministic = config.deterministic;
    tc.threads = config.effective_threads();

    TrainSummary summary =
        train(model, examples, tc, paths.log_file(stage == 1 ? "stage1" : "stage2"));
    save_checkpoint(paths.ckpt_dir(stage == 1 ? "stage1" : "stage2"), model, stage, summary.steps,
                    config.hash());
    return summary;
}

std::vector<std::string> sample_responses(const Model& model, const InstructionPair& pair,
                                          FcnStore& store, std::size_t k, double temperature,
                                          std::uint64_t seed, const std::string& prompt_hint) {
    std::string prompt = pair.prompt;
    if (!prompt_hint.empty()) {
        auto cue = prompt.rfind("answer :");
        if (cue != std::string::npos)
            prompt.insert(cue, prompt_hint + " ");
        else
            prompt += " " + prompt_hint;
    }

    std::vector<FcnTokenSequence> seqs;
    std::vector<const FcnTokenSequence*> ptrs;
    seqs.reserve(pair.fcn_refs.size());
    for (const auto& ref : pair.fcn_refs) {
        seqs.push_back(encode(store.get(ref), model.partition, model.encoder, model.tau));
        ptrs.push_back(&seqs.back());
    }
    Assembled prompt_only =
        assemble_input(model.tokenizer.tokenize(prompt), ptrs, {}, model.lm);

    std::vector<std::string> out;
    const std::size_t max_len = 8;
    for (std::size_t s = 0; s < k; ++s) {
        DecodeMode mode = (k == 1) ? DecodeMode::greedy()
                                   : DecodeMode::sample(temperature, Rng::derive(seed, s));
        DecodeResult r = decode(prompt_only, model.lm, mode, max_len);
        out.push_back(model.tokenizer.detokenize(r.answer_ids));
    }
    return out;
}

std::vector<MetricReport> run_eval(const RunConfig& config, const EvalOptions& options) {
    Layout paths = layout_of(config);
    Model model = load_checkpoint(paths.ckpt_dir(options.checkpoint));
    auto pairs = read_pairs(paths.pairs_file(options.pairs_file));
    if (config.eval_max_items && pairs.size() > config.eval_max_items)
        pairs.resize(config.eval_max_items);
    FcnStore store(paths.fcn_dir());

    const std::uint64_t seed = config.eval_seed ? config.eval_seed : Rng::derive(config.seed, 6);
    std::size_t item_index = 0;
    ResponseSampler sampler = [&](const InstructionPair& pair, std::size_t k) {
        return sample_responses(model, pair, store, k, config.eval_temperature,
                                Rng::derive(seed, item_index++), config.eval_prompt_hint);
    };

    std::vector<MetricReport> reports =
        evaluate_items(pairs, config.attributes, sampler, config.eval_k);
    fs::create_directories(paths.eval_dir());
    io::write_text(paths.eval_dir() / "report.txt", report_table(reports));
    write_reports(paths.eval_dir() / "report.jsonl", reports);
    return reports;
}

namespace {

std::vector<std::string> token_labels(const AtlasPartition& partition) {
    std::vector<std::string> labels = partition.roi_names;
    for (std::size_t k = 1; k <= partition.subnet_count; ++k)
        labels.push_back("subnet_" + std::to_string(k));
    labels.push_back("global");
    return labels;
}

}  // namespace

BiomarkerResult run_biomarker(const RunConfig& config, const BiomarkerOptions& options) {
    Layout paths = layout_of(config);
    Model model = load_checkpoint(paths.ckpt_dir(options.checkpoint));
    auto pairs = read_pairs(paths.pairs_file(options.pairs_file));
    FcnStore store(paths.fcn_dir());

    // Optional subject filter works through the fcn manifest (path -> subject).
    std::map<std::string, std::string> subject_of;
    if (fs::exists(paths.fcn_manifest()))
        for (const auto& ref : read_fcn_manifest(paths.fcn_manifest()))
            subject_of[ref.path] = ref.subject_id;
    std::set<std::string> wanted(options.subjects.begin(), options.subjects.end());

    BiomarkerResult result;
    for (const auto& pair : pairs) {
        if (pair.fcn_refs.size() != 1) continue;  // interaction maps are per single profile
        if (!options.attribute.empty() && pair.attribute != options.attribute) continue;
        if (!wanted.empty()) {
            auto it = subject_of.find(pair.fcn_refs[0]);
            if (it == subject_of.end() || !wanted.count(it->second)) continue;
        }

        FcnTokenSequence seq =
            encode(store.get(pair.fcn_refs[0]), model.partition, model.encoder, model.tau);
        std::vector<const FcnTokenSequence*> ptrs{&seq};
        std::vector<int> prompt_ids = model.tokenizer.tokenize(pair.prompt);

        Assembled prompt_only = assemble_input(prompt_ids, ptrs, {}, model.lm);
        DecodeResult decoded = decode(prompt_only, model.lm, DecodeMode::greedy(), 8);
        std::vector<int> answer_ids =
            decoded.answer_ids.empty() ? model.tokenizer.tokenize(pair.answer)
                                       : decoded.answer_ids;

        Assembled full = assemble_input(prompt_ids, ptrs, answer_ids, model.lm);
        LmCache cache;
        AttentionTensor attention;
        lm_forward(full.emb, model.lm, cache, &attention);

        std::vector<std::size_t> fcn_positions;
        for (const auto& span : full.fcn_spans)
            for (std::size_t t = span.begin; t < span.end; ++t) fcn_positions.push_back(t);
        std::vector<std::size_t> answer_positions;
        for (std::size_t t = full.answer_span.begin; t < full.answer_span.end; ++t)
            answer_positions.push_back(t);

        SaliencyVector sal = aggregate_saliency(attention, fcn_positions, answer_positions);
        Matrix tmap = token_interaction_map(attention, fcn_positions);

        if (result.items == 0) {
            result.saliency = sal;
            result.token_map = tmap;
        } else {
            for (std::size_t i = 0; i < sal.scores.size(); ++i)
                result.saliency.scores[i] += sal.scores[i];
            for (std::size_t i = 0; i < tmap.size(); ++i)
                result.token_map.data[i] += tmap.data[i];
        }
        ++result.items;
    }
    if (result.items == 0)
        throw dataset_error("biomarker: no single-profile items matched the filters");

    const double inv = 1.0 / static_cast<double>(result.items);
    for (double& s : result.saliency.scores) s *= inv;
    kern::scale(inv, result.token_map.data.data(), result.token_map.size());
    result.subnet_map = group_by_subnetwork(result.token_map, model.partition);

    fs::create_directories(paths.biomarker_dir());
    std::vector<std::string> tlabels = token_labels(model.partition);
    Matrix sal_row(1, result.saliency.scores.size());
    sal_row.data = result.saliency.scores;
    io::write_matrix_csv(paths.biomarker_dir() / "saliency.csv", sal_row, tlabels,
                         {"saliency"});
    emit_plot_data(result.token_map, tlabels, paths.biomarker_dir() / "token_map.csv");
    emit_plot_data(result.subnet_map, subnet_map_labels(model.partition),
                   paths.biomarker_dir() / "subnet_map.csv");
    return result;
}

GradCheckReport run_gradcheck(std::uint64_t seed) {
    // Micro instance sized per the gradient-check contract: d_model 16, two
    // blocks, every input path (null, single profile, dual profile) present.
    std::vector<AttributeDef> attrs;
    AttributeDef group;
    group.name = "group";
    group.kind = AttributeDef::Kind::categorical;
    group.labels = {"group1", "group2"};
    attrs.push_back(group);
    AttributeDef score;
    score.name = "score";
    score.kind = AttributeDef::Kind::continuous;
    score.min = 0.0;
    score.max = 100.0;
    attrs.push_back(score);

    PromptTemplateSet templates = PromptTemplateSet::defaults(attrs);
    Tokenizer tokenizer = Tokenizer::build(vocabulary_words(attrs, templates));

    for (std::uint64_t attempt = 0; attempt < 8; ++attempt) {
        const std::uint64_t s = Rng::derive(seed, 0x6c4ecULL + attempt);

        Model model;
        model.tokenizer = tokenizer;
        model.partition = AtlasPartition::make_default(6, 2);
        model.tau = 0.5;
        EncoderConfig ec{6, 8, 8, 16};
        model.encoder = EncoderParams::init(ec, Rng::derive(s, 1));
        LmConfig lc;
        lc.d_model = 16;
        lc.blocks = 2;
        lc.heads = 2;
        lc.ffn_hidden = 32;
        lc.max_seq = 64;
        lc.vocab = static_cast<std::size_t>(tokenizer.vocab_size());
        model.lm = LmParams::init(lc, Rng::derive(s, 2));

        auto random_fcn = [&](std::uint64_t fseed) {
            Rng rng(fseed);
            BoldSeries bold;
            bold.subject_id = "g";
            bold.samples = Matrix(12, 6);
            for (auto& v : bold.samples.data) v = rng.normal();
            return pearson_fcn(bold);
        };
        FcnMatrix fcn_a = random_fcn(Rng::derive(s, 3));
        FcnMatrix fcn_b = random_fcn(Rng::derive(s, 4));

        std::vector<TrainExample> batch;
        TrainExample judgment;
        judgment.prompt_ids = tokenizer.tokenize(
            "question : is the group of this subject group1 ? subject profile : <fcn> . answer :");
        judgment.answer_ids = tokenizer.tokenize("yes");
        judgment.fcns = {&fcn_a};
        batch.push_back(judgment);

        TrainExample comparative;
        comparative.prompt_ids = tokenizer.tokenize(
            "question : which subject has the higher score , the first or the second ? first "
            "subject : <fcn> . second subject : <fcn> . answer :");
        comparative.answer_ids = tokenizer.tokenize("second");
        comparative.fcns = {&fcn_a, &fcn_b};
        batch.push_back(comparative);

        TrainExample nullmode;
        nullmode.prompt_ids = tokenizer.tokenize(
            "question : what is the group of this subject ? subject profile : <fcn> . answer :");
        nullmode.answer_ids = tokenizer.tokenize("group2");
        batch.push_back(nullmode);

        ParamPartition part{true, true};
        GradCheckReport report = gradient_check(model, batch, part);
        // Finite differences are unreliable when a rectifier input sits on
        // the kink; reseed instead of reporting a spurious mismatch.
        if (report.min_relu_margin < 1e-4 && attempt + 1 < 8) continue;
        return report;
    }
    throw training_error("gradcheck could not find a kink-free seed");
}

}  // namespace fcni::pipeline
