#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "fcni/error.hpp"
#include "fcni/io.hpp"
#include "fcni/pipeline.hpp"
#include "test_util.hpp"

using namespace fcni;
namespace fs = std::filesystem;

namespace {

// Tiny but complete run configuration: everything from cohort to biomarker
// finishes in seconds.
RunConfig tiny_config(const fs::path& out, std::uint64_t seed = 1) {
    RunConfig c = RunConfig::defaults();
    c.d = 6;
    c.subnets = 2;
    c.window_length = 16;
    c.window_step = 8;
    c.subjects = 14;
    c.timepoints = 32;
    c.base_noise = 0.1;
    c.d_model = 32;
    c.lm_blocks = 1;
    c.lm_heads = 2;
    c.ffn_hidden = 48;
    c.max_seq = 96;
    c.gcn_hidden = 8;
    c.proj_hidden = 8;
    c.stage1_counts = {30, 40, 20};
    c.stage2_counts = {10, 10, 10};
    c.test_counts = {10, 12, 8};
    c.pretrain_pairs = 60;
    c.pretrain_epochs = 1;
    c.stage1.epochs = 1;
    c.stage2.epochs = 1;
    c.eval_k = 1;
    c.seed = seed;
    c.threads = 2;
    c.out_dir = out.string();

    AttributeDef group;
    group.name = "group";
    group.kind = AttributeDef::Kind::categorical;
    group.labels = {"group1", "group2"};
    group.effect = AttributeEffect{1, 2, 0.4};
    AttributeDef score;
    score.name = "score";
    score.kind = AttributeDef::Kind::continuous;
    score.min = 0.0;
    score.max = 100.0;
    c.attributes = {group, score};
    return c;
}

// Recursive byte comparison of two directories.
bool dirs_identical(const fs::path& a, const fs::path& b) {
    std::vector<fs::path> rel_a, rel_b;
    for (const auto& e : fs::recursive_directory_iterator(a))
        if (e.is_regular_file()) rel_a.push_back(fs::relative(e.path(), a));
    for (const auto& e : fs::recursive_directory_iterator(b))
        if (e.is_regular_file()) rel_b.push_back(fs::relative(e.path(), b));
    std::sort(rel_a.begin(), rel_a.end());
    std::sort(rel_b.begin(), rel_b.end());
    if (rel_a != rel_b) return false;
    for (const auto& r : rel_a)
        if (io::read_bytes(a / r) != io::read_bytes(b / r)) return false;
    return true;
}

}  // namespace

TEST_CASE("pipeline runs end to end and every stage is byte-reproducible") {
    testutil::TempDir tmp("pipe");
    RunConfig c1 = tiny_config(tmp.path / "run1");
    RunConfig c2 = tiny_config(tmp.path / "run2");

    for (const RunConfig* c : {&c1, &c2}) {
        auto manifest = pipeline::run_cohort(*c);
        CHECK(manifest.records.size() == 14);

        auto refs = pipeline::run_fcn(*c);
        // 14 originals + 3 windows each: floor((32-16)/8)+1 = 3.
        std::size_t windows = 0;
        for (const auto& r : refs)
            if (r.windowed) ++windows;
        CHECK(refs.size() - windows == 14);
        CHECK(windows == 14 * 3);

        auto synth_report = pipeline::run_synth(*c);
        CHECK(synth_report.total_shortfall() == 0);
        CHECK(synth_report.stage1.pairs.size() == 90);
        CHECK(synth_report.stage2.pairs.size() == 30);
        CHECK(synth_report.test.pairs.size() == 30);

        auto pretrain = pipeline::run_pretrain(*c);
        CHECK(pretrain.final_loss < pretrain.initial_loss);

        auto s1 = pipeline::run_train(*c, 1);
        CHECK(s1.final_loss < s1.initial_loss);
        auto s2 = pipeline::run_train(*c, 2);
        CHECK(std::isfinite(s2.final_loss));

        auto reports = pipeline::run_eval(*c);
        CHECK(!reports.empty());

        pipeline::BiomarkerOptions bio;
        bio.attribute = "group";
        auto bm = pipeline::run_biomarker(*c, bio);
        CHECK(bm.items > 0);
        CHECK(bm.subnet_map.rows == 4);
        double sum = 0.0;
        for (double v : bm.saliency.scores) sum += v;
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }

    CHECK(dirs_identical(tmp.path / "run1", tmp.path / "run2"));
}

TEST_CASE("stage training preserves the frozen lm checkpoint bytes in stage one") {
    testutil::TempDir tmp("freeze");
    RunConfig c = tiny_config(tmp.path / "run");
    pipeline::run_cohort(c);
    pipeline::run_fcn(c);
    pipeline::run_synth(c);
    pipeline::run_pretrain(c);
    pipeline::run_train(c, 1);

    auto layout = pipeline::layout_of(c);
    CHECK(io::read_bytes(layout.ckpt_dir("pretrain") / "lm.ntf") ==
          io::read_bytes(layout.ckpt_dir("stage1") / "lm.ntf"));
    CHECK(io::read_bytes(layout.ckpt_dir("pretrain") / "encoder.ntf") !=
          io::read_bytes(layout.ckpt_dir("stage1") / "encoder.ntf"));
}

TEST_CASE("missing fcn files surface as a dataset error") {
    testutil::TempDir tmp("missing");
    RunConfig c = tiny_config(tmp.path / "run");
    pipeline::run_cohort(c);
    pipeline::run_fcn(c);
    pipeline::run_synth(c);

    pipeline::FcnStore store(pipeline::layout_of(c).fcn_dir());
    CHECK_THROWS_AS(store.get("nope.fcn"), Error);
}

TEST_CASE("fcn step on a T=180 subject with reference defaults emits 1 original + 5 windows") {
    testutil::TempDir tmp("t180");
    RunConfig c = RunConfig::defaults();
    c.d = 6;
    c.subnets = 2;
    c.gcn_hidden = 8;
    c.proj_hidden = 8;
    c.subjects = 2;
    c.timepoints = 180;  // window defaults L=100, P=20 stay untouched
    c.out_dir = (tmp.path / "run").string();
    AttributeDef group;
    group.name = "group";
    group.kind = AttributeDef::Kind::categorical;
    group.labels = {"a", "b"};
    c.attributes = {group};

    pipeline::run_cohort(c);
    auto refs = pipeline::run_fcn(c);
    std::size_t originals = 0, windows = 0;
    for (const auto& r : refs)
        (r.windowed ? windows : originals) += 1;
    CHECK(originals == 2);
    CHECK(windows == 2 * 5);
}

TEST_CASE("gradcheck micro suite passes the 1e-5 bar") {
    auto report = pipeline::run_gradcheck(1);
    CHECK(report.min_relu_margin >= 1e-4);
    for (const auto& e : report.entries) {
        INFO(e.tensor);
        CHECK(e.max_rel_err < 1e-5);
    }
}

TEST_CASE("evaluation is deterministic and prompt hints change prompts only") {
    testutil::TempDir tmp("evaldet");
    RunConfig c = tiny_config(tmp.path / "run");
    pipeline::run_cohort(c);
    pipeline::run_fcn(c);
    pipeline::run_synth(c);
    pipeline::run_pretrain(c);
    pipeline::run_train(c, 1);
    pipeline::run_train(c, 2);

    auto r1 = pipeline::run_eval(c);
    auto bytes1 = io::read_bytes(pipeline::layout_of(c).eval_dir() / "report.jsonl");
    auto r2 = pipeline::run_eval(c);
    auto bytes2 = io::read_bytes(pipeline::layout_of(c).eval_dir() / "report.jsonl");
    CHECK(bytes1 == bytes2);

    // A prompt hint (label-set restriction) may change metric values but
    // never the task inventory or the item counts: ground truth is fixed.
    RunConfig hinted = c;
    hinted.eval_prompt_hint = "choose group1 or group2 .";
    auto r3 = pipeline::run_eval(hinted);
    REQUIRE(r3.size() == r1.size());
    for (std::size_t i = 0; i < r1.size(); ++i) {
        CHECK(r3[i].task == r1[i].task);
        CHECK(r3[i].n == r1[i].n);
    }
}
