#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>

#include "fcni/error.hpp"
#include "fcni/evalkit.hpp"
#include "fcni/io.hpp"
#include "fcni/rng.hpp"
#include "fcni/synth.hpp"
#include "test_util.hpp"

using namespace fcni;

namespace {

// Brute-force confusion-matrix oracle over explicit class strings.
struct ConfusionOracle {
    std::vector<std::string> classes;
    std::vector<std::vector<double>> counts;

    ConfusionOracle(const std::vector<std::string>& preds, const std::vector<std::string>& truths) {
        auto add = [&](const std::string& c) {
            for (const auto& e : classes)
                if (e == c) return;
            classes.push_back(c);
        };
        for (const auto& t : truths) add(t);
        for (const auto& p : preds) add(p);
        counts.assign(classes.size(), std::vector<double>(classes.size(), 0.0));
        for (std::size_t i = 0; i < preds.size(); ++i)
            counts[idx(truths[i])][idx(preds[i])] += 1.0;
    }
    std::size_t idx(const std::string& c) const {
        for (std::size_t i = 0; i < classes.size(); ++i)
            if (classes[i] == c) return i;
        return 0;
    }

    double acc() const {
        double correct = 0.0, total = 0.0;
        for (std::size_t a = 0; a < classes.size(); ++a)
            for (std::size_t b = 0; b < classes.size(); ++b) {
                total += counts[a][b];
                if (a == b) correct += counts[a][b];
            }
        return correct / total;
    }
    double mcc() const {
        double s = 0.0, c = 0.0;
        std::vector<double> t(classes.size(), 0.0), p(classes.size(), 0.0);
        for (std::size_t a = 0; a < classes.size(); ++a)
            for (std::size_t b = 0; b < classes.size(); ++b) {
                s += counts[a][b];
                t[a] += counts[a][b];
                p[b] += counts[a][b];
                if (a == b) c += counts[a][b];
            }
        double tp = 0.0, t2 = 0.0, p2 = 0.0;
        for (std::size_t a = 0; a < classes.size(); ++a) {
            tp += t[a] * p[a];
            t2 += t[a] * t[a];
            p2 += p[a] * p[a];
        }
        double denom = std::sqrt((s * s - p2) * (s * s - t2));
        return denom > 0 ? (c * s - tp) / denom : 0.0;
    }
    double macro_f1() const {
        double sum = 0.0;
        std::size_t n = 0;
        std::vector<double> t(classes.size(), 0.0), p(classes.size(), 0.0);
        for (std::size_t a = 0; a < classes.size(); ++a)
            for (std::size_t b = 0; b < classes.size(); ++b) {
                t[a] += counts[a][b];
                p[b] += counts[a][b];
            }
        for (std::size_t a = 0; a < classes.size(); ++a) {
            if (t[a] == 0.0) continue;
            double prec = p[a] > 0 ? counts[a][a] / p[a] : 0.0;
            double rec = counts[a][a] / t[a];
            sum += (prec + rec) > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
            ++n;
        }
        return n ? sum / n : 0.0;
    }
};

}  // namespace

TEST_CASE("parse_response: keyword hit, first integer, garbage") {
    auto p = parse_response("The subject is male.", true, {"male", "female"});
    CHECK(p.kind == Prediction::Kind::label);
    CHECK(p.label == "male");

    auto v = parse_response("I estimate the score is 42 out of 100", false, {});
    CHECK(v.kind == Prediction::Kind::value);
    CHECK(v.value == 42);

    CHECK(!parse_response("@@##", true, {"male"}).parseable());
    CHECK(!parse_response("", false, {}).parseable());
    CHECK(!parse_response("the value is 250", false, {}).parseable());  // out of range

    // Earliest occurrence wins; whole words only.
    auto e = parse_response("female or male ?", true, {"male", "female"});
    CHECK(e.label == "female");
    auto w = parse_response("malevolent but female", true, {"male", "female"});
    CHECK(w.label == "female");  // "malevolent" is not the word "male"

    // Case-insensitive, punctuation-separated.
    auto c = parse_response("ANSWER: Yes.", true, {"yes", "no"});
    CHECK(c.label == "yes");

    // Multi-word label matched as a word sequence.
    auto m = parse_response("likely early adulthood here", true,
                            {"early childhood", "early adulthood"});
    CHECK(m.label == "early adulthood");
}

TEST_CASE("parse_response is total over fuzzed strings") {
    Rng rng(99);
    for (int i = 0; i < 10000; ++i) {
        std::string s;
        std::size_t len = rng.index(40);
        for (std::size_t j = 0; j < len; ++j)
            s += static_cast<char>(rng.uniform_u64(1, 255));
        Prediction p1 = parse_response(s, true, {"yes", "no"});
        Prediction p2 = parse_response(s, false, {});
        CHECK((p1.kind == Prediction::Kind::label || p1.kind == Prediction::Kind::unparseable));
        if (p2.kind == Prediction::Kind::value) {
            CHECK(p2.value >= 0);
            CHECK(p2.value <= 100);
        }
        // Deterministic.
        CHECK(parse_response(s, true, {"yes", "no"}).key() == p1.key());
    }
}

TEST_CASE("self-consistency: majority, median, unparseable handling") {
    auto L = [](const char* s) { return Prediction::of_label(s); };
    CHECK(self_consistency({L("a"), L("a"), L("b")}).label == "a");
    CHECK(self_consistency({Prediction::of_value(10), Prediction::of_value(40),
                            Prediction::of_value(90)})
              .value == 40);
    // Even count takes the lower middle.
    CHECK(self_consistency({Prediction::of_value(10), Prediction::of_value(40),
                            Prediction::of_value(60), Prediction::of_value(90)})
              .value == 40);
    // Ties break toward the earliest sample.
    CHECK(self_consistency({L("b"), L("a"), L("a"), L("b")}).label == "b");
    // Unparseable entries are ignored unless they are all there is.
    CHECK(self_consistency({Prediction::none(), L("a"), Prediction::none()}).label == "a");
    CHECK(!self_consistency({Prediction::none(), Prediction::none()}).parseable());
    CHECK_THROWS_AS(self_consistency({}), Error);
}

TEST_CASE("self-consistency returns the unique mode on exhaustive k<=5 patterns") {
    const char* labels[3] = {"a", "b", "c"};
    for (std::size_t k = 1; k <= 5; ++k) {
        std::size_t total = 1;
        for (std::size_t i = 0; i < k; ++i) total *= 3;
        for (std::size_t code = 0; code < total; ++code) {
            std::vector<Prediction> votes;
            std::size_t counts[3] = {0, 0, 0};
            std::size_t c = code;
            for (std::size_t i = 0; i < k; ++i) {
                votes.push_back(Prediction::of_label(labels[c % 3]));
                counts[c % 3] += 1;
                c /= 3;
            }
            std::size_t best = std::max({counts[0], counts[1], counts[2]});
            int modes = (counts[0] == best) + (counts[1] == best) + (counts[2] == best);
            Prediction out = self_consistency(votes);
            if (modes == 1) {
                for (int i = 0; i < 3; ++i)
                    if (counts[i] == best) CHECK(out.label == labels[i]);
            } else {
                // Tie: earliest-sampled among the tied labels.
                for (const auto& v : votes) {
                    if (counts[ v.label == "a" ? 0 : v.label == "b" ? 1 : 2] == best) {
                        CHECK(out.label == v.label);
                        break;
                    }
                }
            }
        }
    }
}

TEST_CASE("classification metrics: perfect, constant, random-vs-oracle") {
    std::vector<std::string> labels = {"x", "y", "z"};

    SUBCASE("perfect predictions") {
        std::vector<Prediction> preds;
        std::vector<std::string> truths;
        for (int i = 0; i < 12; ++i) {
            truths.push_back(labels[i % 3]);
            preds.push_back(Prediction::of_label(labels[i % 3]));
        }
        auto m = classification_metrics(preds, truths, labels);
        CHECK(m.acc == 1.0);
        CHECK(m.mcc == doctest::Approx(1.0));
        CHECK(m.macro_f1 == doctest::Approx(1.0));
    }

    SUBCASE("constant predictor on balanced binary truths has mcc 0") {
        std::vector<Prediction> preds;
        std::vector<std::string> truths;
        for (int i = 0; i < 10; ++i) {
            truths.push_back(i % 2 ? "x" : "y");
            preds.push_back(Prediction::of_label("x"));
        }
        auto m = classification_metrics(preds, truths, {"x", "y"});
        CHECK(m.acc == 0.5);
        CHECK(m.mcc == 0.0);
    }

    SUBCASE("random sets match the brute-force oracle within 1e-10") {
        Rng rng(7);
        for (int trial = 0; trial < 50; ++trial) {
            std::size_t n = 20;
            std::vector<Prediction> preds;
            std::vector<std::string> truths;
            std::vector<std::string> pred_strings;
            for (std::size_t i = 0; i < n; ++i) {
                truths.push_back(labels[rng.index(3)]);
                if (rng.uniform01() < 0.1) {
                    preds.push_back(Prediction::none());
                    pred_strings.push_back("<unparseable>");
                } else {
                    std::string l = labels[rng.index(3)];
                    preds.push_back(Prediction::of_label(l));
                    pred_strings.push_back(l);
                }
            }
            ConfusionOracle oracle(pred_strings, truths);
            auto m = classification_metrics(preds, truths, labels);
            CHECK(std::fabs(m.acc - oracle.acc()) < 1e-10);
            CHECK(std::fabs(m.mcc - oracle.mcc()) < 1e-10);
            CHECK(std::fabs(m.macro_f1 - oracle.macro_f1()) < 1e-10);
        }
    }

    SUBCASE("binary mcc equals the classic formula") {
        Rng rng(13);
        for (int trial = 0; trial < 30; ++trial) {
            std::vector<Prediction> preds;
            std::vector<std::string> truths;
            double tp = 0, tn = 0, fp = 0, fn = 0;
            for (int i = 0; i < 25; ++i) {
                bool truth = rng.uniform01() < 0.5;
                bool pred = rng.uniform01() < 0.5;
                truths.push_back(truth ? "pos" : "neg");
                preds.push_back(Prediction::of_label(pred ? "pos" : "neg"));
                if (truth && pred) ++tp;
                if (!truth && !pred) ++tn;
                if (!truth && pred) ++fp;
                if (truth && !pred) ++fn;
            }
            double denom = std::sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn));
            double classic = denom > 0 ? (tp * tn - fp * fn) / denom : 0.0;
            auto m = classification_metrics(preds, truths, {"pos", "neg"});
            CHECK(std::fabs(m.mcc - classic) < 1e-12);
        }
    }

    SUBCASE("empty input is invalid") {
        CHECK_THROWS_AS(classification_metrics({}, {}, {"x"}), Error);
    }
}

TEST_CASE("regression metrics: identity, anti-correlation, loop oracle, unparseable") {
    SUBCASE("exact predictions") {
        std::vector<Prediction> preds;
        std::vector<double> truths;
        for (int i = 0; i < 10; ++i) {
            preds.push_back(Prediction::of_value(i * 10));
            truths.push_back(i * 10 / 100.0);
        }
        auto m = regression_metrics(preds, truths);
        CHECK(m.mae == 0.0);
        CHECK(m.pcc == doctest::Approx(1.0));
    }

    SUBCASE("anti-correlated predictions give pcc -1") {
        std::vector<Prediction> preds;
        std::vector<double> truths;
        for (int i = 0; i <= 10; ++i) {
            preds.push_back(Prediction::of_value(100 - i * 10));
            truths.push_back(i * 10 / 100.0);
        }
        CHECK(regression_metrics(preds, truths).pcc == doctest::Approx(-1.0));
    }

    SUBCASE("mae shift detection") {
        std::vector<Prediction> exact, shifted;
        std::vector<double> truths;
        for (int i = 0; i < 8; ++i) {
            truths.push_back(0.2 + 0.05 * i);
            exact.push_back(Prediction::of_value(20 + 5 * i));
            shifted.push_back(Prediction::of_value(20 + 5 * i + 10));
        }
        CHECK(regression_metrics(exact, truths).mae == doctest::Approx(0.0));
        CHECK(regression_metrics(shifted, truths).mae == doctest::Approx(0.10));
    }

    SUBCASE("loop oracle on random pairs") {
        Rng rng(17);
        for (int trial = 0; trial < 20; ++trial) {
            std::size_t n = 15;
            std::vector<Prediction> preds;
            std::vector<double> truths;
            for (std::size_t i = 0; i < n; ++i) {
                preds.push_back(Prediction::of_value(static_cast<int>(rng.index(101))));
                truths.push_back(rng.uniform01());
            }
            double mae = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                mae += std::fabs(preds[i].value / 100.0 - truths[i]);
            mae /= n;
            double mx = 0, my = 0;
            for (std::size_t i = 0; i < n; ++i) {
                mx += preds[i].value / 100.0;
                my += truths[i];
            }
            mx /= n;
            my /= n;
            double sxy = 0, sxx = 0, syy = 0;
            for (std::size_t i = 0; i < n; ++i) {
                double dx = preds[i].value / 100.0 - mx, dy = truths[i] - my;
                sxy += dx * dy;
                sxx += dx * dx;
                syy += dy * dy;
            }
            auto m = regression_metrics(preds, truths);
            CHECK(std::fabs(m.mae - mae) < 1e-12);
            CHECK(std::fabs(m.pcc - sxy / std::sqrt(sxx * syy)) < 1e-12);
        }
    }

    SUBCASE("unparseable contributes worst-case mae and is excluded from pcc") {
        std::vector<Prediction> preds = {Prediction::of_value(50), Prediction::none(),
                                         Prediction::of_value(70)};
        std::vector<double> truths = {0.5, 0.9, 0.7};
        auto m = regression_metrics(preds, truths);
        CHECK(m.mae == doctest::Approx(1.0 / 3.0));
        CHECK(m.pcc == doctest::Approx(1.0));  // the two parseable points align
    }

    SUBCASE("zero-variance side defines pcc = 0") {
        std::vector<Prediction> preds = {Prediction::of_value(50), Prediction::of_value(50),
                                         Prediction::of_value(50)};
        std::vector<double> truths = {0.1, 0.5, 0.9};
        CHECK(regression_metrics(preds, truths).pcc == 0.0);
    }

    SUBCASE("fewer than two pairs is invalid") {
        CHECK_THROWS_AS(regression_metrics({Prediction::of_value(1)}, {0.5}), Error);
    }
}

TEST_CASE("evaluate_items groups by task and applies self-consistency") {
    AttributeDef gender;
    gender.name = "gender";
    gender.kind = AttributeDef::Kind::categorical;
    gender.labels = {"male", "female"};
    AttributeDef fiq;
    fiq.name = "fiq";
    fiq.kind = AttributeDef::Kind::continuous;
    fiq.min = 0;
    fiq.max = 100;

    std::vector<InstructionPair> items;
    for (int i = 0; i < 6; ++i) {
        InstructionPair p;
        p.id = "g" + std::to_string(i);
        p.paradigm = Paradigm::predictive;
        p.attribute = "gender";
        p.prompt = "what is the gender ? <fcn> answer :";
        p.answer = i % 2 ? "male" : "female";
        items.push_back(p);
        InstructionPair q;
        q.id = "f" + std::to_string(i);
        q.paradigm = Paradigm::predictive;
        q.attribute = "fiq";
        q.prompt = "what is the fiq ? <fcn> answer :";
        q.answer = std::to_string(10 * i + 20);
        items.push_back(q);
    }

    // A sampler that answers gender correctly 2-of-3 and fiq exactly.
    ResponseSampler sampler = [&](const InstructionPair& item, std::size_t k) {
        std::vector<std::string> out;
        for (std::size_t s = 0; s < k; ++s) {
            if (item.attribute == "gender")
                out.push_back(s == 1 ? (item.answer == "male" ? "female" : "male") : item.answer);
            else
                out.push_back("the score is " + item.answer);
        }
        return out;
    };

    auto reports = evaluate_items(items, {gender, fiq}, sampler, 3);
    std::map<std::string, MetricReport> by_task;
    for (const auto& r : reports) by_task[r.task] = r;

    REQUIRE(by_task.count("gender/predictive"));
    REQUIRE(by_task.count("fiq/predictive"));
    REQUIRE(by_task.count("macro/classification"));
    REQUIRE(by_task.count("macro/regression"));
    CHECK(by_task["gender/predictive"].acc == 1.0);  // majority rescues the flipped sample
    CHECK(by_task["fiq/predictive"].mae == doctest::Approx(0.0));
    CHECK(by_task["fiq/predictive"].pcc == doctest::Approx(1.0));
}

TEST_CASE("report table and jsonl emission") {
    testutil::TempDir tmp("reports");
    MetricReport r;
    r.task = "gender/judgment";
    r.classification = true;
    r.acc = 0.85;
    r.mcc = 0.7;
    r.macro_f1 = 0.84;
    r.n = 200;
    std::string table = report_table({r});
    CHECK(table.find("gender/judgment") != std::string::npos);
    CHECK(table.find("0.8500") != std::string::npos);

    write_reports(tmp.path / "r.jsonl", {r});
    std::string bytes = io::read_bytes(tmp.path / "r.jsonl");
    CHECK(bytes.find("\"acc\":0.85") != std::string::npos);
    write_reports(tmp.path / "r.jsonl", {r});
    CHECK(io::read_bytes(tmp.path / "r.jsonl") == bytes);
}
