// Command-line driver for the full pipeline: cohort generation, connectivity
// construction, instruction synthesis, LM pretraining, two-stage training,
// evaluation, biomarker maps and the gradient-check suite.

#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "fcni/error.hpp"
#include "fcni/pipeline.hpp"

using namespace fcni;

namespace {

struct GlobalArgs {
    std::string config_path;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::size_t threads = 0;
    bool deterministic = false;
    std::string out_dir;
    std::string simd = "auto";
};

RunConfig resolve_config(const GlobalArgs& args) {
    RunConfig config =
        args.config_path.empty() ? RunConfig::defaults() : RunConfig::from_file(args.config_path);

    if (args.seed_set) config.seed = args.seed;
    if (args.deterministic) config.deterministic = true;

    // Environment overrides cover paths and thread counts only.
    if (const char* env = std::getenv("FCN_INSTRUCT_OUT"); env && *env) config.out_dir = env;
    if (const char* env = std::getenv("FCN_INSTRUCT_THREADS"); env && *env)
        config.threads = static_cast<std::size_t>(std::strtoull(env, nullptr, 10));
    if (!args.out_dir.empty()) config.out_dir = args.out_dir;
    if (args.threads > 0) config.threads = args.threads;

    if (args.simd == "scalar")
        kern::force(kern::Level::scalar);
    else if (args.simd == "avx2")
        kern::force(kern::Level::avx2);
    else
        kern::force_auto();
    return config;
}

int exit_code_of(const Error& e) {
    switch (e.kind()) {
        case ErrorKind::config: return 2;
        case ErrorKind::invalid_input: return 2;
        default: return 1;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fcn-instruct: instruction-tuned attribute prediction from synthetic "
                 "functional connectivity"};
    app.require_subcommand(1);

    GlobalArgs args;
    app.add_option("--config", args.config_path, "run configuration file");
    app.add_option("--seed", args.seed, "master seed override")
        ->each([&](const std::string&) { args.seed_set = true; });
    app.add_option("--threads", args.threads, "worker thread cap");
    app.add_flag("--deterministic", args.deterministic, "fixed-order reductions everywhere");
    app.add_option("--out", args.out_dir, "artifact output directory");
    app.add_option("--simd", args.simd, "kernel variant: auto, scalar or avx2")
        ->check(CLI::IsMember({"auto", "scalar", "avx2"}));

    auto* cohort_cmd = app.add_subcommand("cohort", "generate the synthetic cohort");
    auto* fcn_cmd = app.add_subcommand("fcn", "build connectivity matrices and windows");
    auto* synth_cmd = app.add_subcommand("synth", "synthesize instruction datasets");
    std::string dump_templates;
    synth_cmd->add_option("--dump-templates", dump_templates,
                          "write the built-in template files to a directory and exit");
    auto* pretrain_cmd = app.add_subcommand("pretrain-lm", "text-only language model pretraining");
    auto* train_cmd = app.add_subcommand("train", "stage 1 (encoder) or stage 2 (joint) training");
    int stage = 1;
    train_cmd->add_option("--stage", stage, "training stage")->check(CLI::Range(1, 2));
    auto* eval_cmd = app.add_subcommand("eval", "decode the test set and report metrics");
    pipeline::EvalOptions eval_options;
    eval_cmd->add_option("--checkpoint", eval_options.checkpoint, "checkpoint name under ckpt/");
    eval_cmd->add_option("--pairs", eval_options.pairs_file, "instruction file name under synth/");
    auto* biomarker_cmd = app.add_subcommand("biomarker", "attention saliency and interaction maps");
    pipeline::BiomarkerOptions bio_options;
    biomarker_cmd->add_option("--checkpoint", bio_options.checkpoint, "checkpoint name");
    biomarker_cmd->add_option("--pairs", bio_options.pairs_file, "instruction file name");
    biomarker_cmd->add_option("--attribute", bio_options.attribute, "restrict to one attribute");
    biomarker_cmd->add_option("--subjects", bio_options.subjects,
                              "restrict to these subject ids (comma separated)")
        ->delimiter(',');
    auto* gradcheck_cmd = app.add_subcommand("gradcheck", "finite-difference gradient suite");

    CLI11_PARSE(app, argc, argv);

    try {
        RunConfig config = resolve_config(args);

        if (cohort_cmd->parsed()) {
            auto manifest = pipeline::run_cohort(config);
            std::cout << "cohort: " << manifest.records.size() << " subjects under "
                      << pipeline::layout_of(config).cohort_dir().string() << "\n";
        } else if (fcn_cmd->parsed()) {
            auto refs = pipeline::run_fcn(config);
            std::size_t windows = 0;
            for (const auto& r : refs)
                if (r.windowed) ++windows;
            std::cout << "fcn: " << refs.size() - windows << " original + " << windows
                      << " window matrices\n";
        } else if (synth_cmd->parsed()) {
            if (!dump_templates.empty()) {
                pipeline::templates_of(config).save_dir(dump_templates);
                std::cout << "templates written to " << dump_templates << "\n";
                return 0;
            }
            auto report = pipeline::run_synth(config);
            std::cout << "synth: stage1 " << report.stage1.pairs.size() << ", stage2 "
                      << report.stage2.pairs.size() << ", test " << report.test.pairs.size()
                      << " pairs\n";
            if (report.total_shortfall() > 0) {
                std::cerr << "synth shortfall: predictive "
                          << report.stage1.shortfall_predictive + report.stage2.shortfall_predictive +
                                 report.test.shortfall_predictive
                          << ", judgment "
                          << report.stage1.shortfall_judgment + report.stage2.shortfall_judgment +
                                 report.test.shortfall_judgment
                          << ", comparative "
                          << report.stage1.shortfall_comparative +
                                 report.stage2.shortfall_comparative +
                                 report.test.shortfall_comparative
                          << " pairs short of the request\n";
                return 3;
            }
        } else if (pretrain_cmd->parsed()) {
            auto summary = pipeline::run_pretrain(config);
            std::cout << "pretrain-lm: loss " << summary.initial_loss << " -> "
                      << summary.final_loss << " over " << summary.steps << " steps\n";
        } else if (train_cmd->parsed()) {
            auto summary = pipeline::run_train(config, stage);
            std::cout << "train stage " << stage << ": loss " << summary.initial_loss << " -> "
                      << summary.final_loss << " over " << summary.steps << " steps\n";
        } else if (eval_cmd->parsed()) {
            auto reports = pipeline::run_eval(config, eval_options);
            std::cout << report_table(reports);
            for (const auto& r : reports)
                if (r.n > 0 && r.n_unparseable * 2 > r.n) {
                    std::cerr << "task " << r.task << " has more than half unparseable outputs\n";
                    return 3;
                }
        } else if (biomarker_cmd->parsed()) {
            auto result = pipeline::run_biomarker(config, bio_options);
            std::cout << "biomarker: aggregated " << result.items << " items into "
                      << pipeline::layout_of(config).biomarker_dir().string() << "\n";
        } else if (gradcheck_cmd->parsed()) {
            auto report = pipeline::run_gradcheck(config.seed);
            for (const auto& e : report.entries)
                std::cout << e.tensor << " max_rel_err " << e.max_rel_err << "\n";
            std::cout << "gradcheck worst " << report.worst << " (relu margin "
                      << report.min_relu_margin << ")\n";
            if (report.worst >= 1e-5) {
                std::cerr << "gradient check failed: worst relative error " << report.worst
                          << " >= 1e-5\n";
                return 1;
            }
        }
        return 0;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_of(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
