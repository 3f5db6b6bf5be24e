#include "fcni/evalkit.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "fcni/error.hpp"
#include "fcni/io.hpp"
#include "fcni/synth.hpp"

namespace fcni {

using nlohmann::json;

std::string Prediction::key() const {
    switch (kind) {
        case Kind::label: return "label:" + label;
        case Kind::value: return "value:" + std::to_string(value);
        case Kind::unparseable: return "<unparseable>";
    }
    return "<unparseable>";
}

namespace {

// Lowercased alphanumeric words; punctuation acts as a separator.
std::vector<std::string> normalize_words(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (unsigned char c : text) {
        if (std::isalnum(c)) {
            cur += static_cast<char>(std::tolower(c));
        } else if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

}  // namespace

Prediction parse_response(const std::string& text, bool categorical,
                          const std::vector<std::string>& label_set) {
    std::vector<std::string> words = normalize_words(text);
    if (categorical) {
        std::vector<std::vector<std::string>> label_words;
        label_words.reserve(label_set.size());
        for (const auto& l : label_set) label_words.push_back(normalize_words(l));

        for (std::size_t pos = 0; pos < words.size(); ++pos) {
            // Prefer the longest label matching at this position.
            int best = -1;
            std::size_t best_len = 0;
            for (std::size_t li = 0; li < label_set.size(); ++li) {
                const auto& lw = label_words[li];
                if (lw.empty() || pos + lw.size() > words.size()) continue;
                if (lw.size() <= best_len) continue;
                bool match = true;
                for (std::size_t i = 0; i < lw.size(); ++i)
                    if (words[pos + i] != lw[i]) {
                        match = false;
                        break;
                    }
                if (match) {
                    best = static_cast<int>(li);
                    best_len = lw.size();
                }
            }
            if (best >= 0) return Prediction::of_label(label_set[static_cast<std::size_t>(best)]);
        }
        return Prediction::none();
    }

    for (const auto& w : words) {
        if (w.size() > 3) continue;
        bool digits = !w.empty() && std::all_of(w.begin(), w.end(),
                                                [](unsigned char c) { return std::isdigit(c); });
        if (!digits) continue;
        int v = std::stoi(w);
        if (v >= 0 && v <= 100) return Prediction::of_value(v);
    }
    return Prediction::none();
}

Prediction self_consistency(const std::vector<Prediction>& predictions) {
    if (predictions.empty()) throw invalid_input("self_consistency needs at least one prediction");
    std::vector<const Prediction*> usable;
    for (const auto& p : predictions)
        if (p.parseable()) usable.push_back(&p);
    if (usable.empty()) return Prediction::none();

    bool all_values = std::all_of(usable.begin(), usable.end(), [](const Prediction* p) {
        return p->kind == Prediction::Kind::value;
    });
    if (all_values) {
        std::vector<int> vals;
        for (const auto* p : usable) vals.push_back(p->value);
        std::sort(vals.begin(), vals.end());
        return Prediction::of_value(vals[(vals.size() - 1) / 2]);  // lower middle for even k
    }

    // Majority vote over canonical keys; ties go to the earliest-sampled key.
    std::map<std::string, std::size_t> counts;
    std::map<std::string, std::size_t> first_seen;
    for (std::size_t i = 0; i < usable.size(); ++i) {
        const std::string k = usable[i]->key();
        ++counts[k];
        first_seen.emplace(k, i);
    }
    std::string best;
    std::size_t best_count = 0;
    std::size_t best_first = usable.size();
    for (const auto& [k, c] : counts) {
        std::size_t seen = first_seen[k];
        if (c > best_count || (c == best_count && seen < best_first)) {
            best = k;
            best_count = c;
            best_first = seen;
        }
    }
    for (const auto* p : usable)
        if (p->key() == best) return *p;
    return Prediction::none();
}

ClassificationMetrics classification_metrics(const std::vector<Prediction>& predictions,
                                             const std::vector<std::string>& truths,
                                             const std::vector<std::string>& label_set) {
    if (predictions.empty() || predictions.size() != truths.size())
        throw invalid_input("classification_metrics: empty or mismatched inputs");

    // Class universe: configured labels, every truth, every predicted key.
    // Unparseable predictions form their own (always wrong) class.
    std::vector<std::string> classes;
    std::set<std::string> seen;
    auto add_class = [&](const std::string& c) {
        if (seen.insert(c).second) classes.push_back(c);
    };
    for (const auto& l : label_set) add_class(l);
    for (const auto& t : truths) add_class(t);
    std::vector<std::string> pred_class(predictions.size());
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const auto& p = predictions[i];
        pred_class[i] = p.kind == Prediction::Kind::label
                            ? p.label
                            : (p.kind == Prediction::Kind::value ? std::to_string(p.value)
                                                                 : "<unparseable>");
        add_class(pred_class[i]);
    }

    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < classes.size(); ++i) index[classes[i]] = i;
    const std::size_t k = classes.size();
    std::vector<std::vector<double>> confusion(k, std::vector<double>(k, 0.0));
    for (std::size_t i = 0; i < predictions.size(); ++i)
        confusion[index[truths[i]]][index[pred_class[i]]] += 1.0;

    const double s = static_cast<double>(predictions.size());
    double correct = 0.0;
    std::vector<double> truth_count(k, 0.0), pred_count(k, 0.0);
    for (std::size_t a = 0; a < k; ++a)
        for (std::size_t b = 0; b < k; ++b) {
            truth_count[a] += confusion[a][b];
            pred_count[b] += confusion[a][b];
            if (a == b) correct += confusion[a][b];
        }

    ClassificationMetrics m;
    m.acc = correct / s;

    double dot_tp = 0.0, sum_t2 = 0.0, sum_p2 = 0.0;
    for (std::size_t a = 0; a < k; ++a) {
        dot_tp += truth_count[a] * pred_count[a];
        sum_t2 += truth_count[a] * truth_count[a];
        sum_p2 += pred_count[a] * pred_count[a];
    }
    double denom = std::sqrt((s * s - sum_p2) * (s * s - sum_t2));
    m.mcc = denom > 0.0 ? (correct * s - dot_tp) / denom : 0.0;

    // Macro F1 over classes that actually occur in the truths.
    double f1_sum = 0.0;
    std::size_t f1_n = 0;
    for (std::size_t a = 0; a < k; ++a) {
        if (truth_count[a] == 0.0) continue;
        double tp = confusion[a][a];
        double prec = pred_count[a] > 0.0 ? tp / pred_count[a] : 0.0;
        double rec = tp / truth_count[a];
        double f1 = (prec + rec) > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
        f1_sum += f1;
        ++f1_n;
    }
    m.macro_f1 = f1_n ? f1_sum / static_cast<double>(f1_n) : 0.0;
    return m;
}

RegressionMetrics regression_metrics(const std::vector<Prediction>& predictions,
                                     const std::vector<double>& truths) {
    if (predictions.size() < 2 || predictions.size() != truths.size())
        throw invalid_input("regression_metrics: need at least 2 matched pairs");

    RegressionMetrics m;
    std::vector<double> xs, ys;
    double abs_sum = 0.0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        if (predictions[i].kind == Prediction::Kind::value) {
            double p = predictions[i].value / 100.0;
            abs_sum += std::fabs(p - truths[i]);
            xs.push_back(p);
            ys.push_back(truths[i]);
        } else {
            abs_sum += 1.0;  // worst case on the unit scale
        }
    }
    m.mae = abs_sum / static_cast<double>(predictions.size());

    if (xs.size() >= 2) {
        double mx = 0.0, my = 0.0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            mx += xs[i];
            my += ys[i];
        }
        mx /= static_cast<double>(xs.size());
        my /= static_cast<double>(xs.size());
        double sxy = 0.0, sxx = 0.0, syy = 0.0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            sxy += (xs[i] - mx) * (ys[i] - my);
            sxx += (xs[i] - mx) * (xs[i] - mx);
            syy += (ys[i] - my) * (ys[i] - my);
        }
        m.pcc = (sxx > 0.0 && syy > 0.0) ? sxy / std::sqrt(sxx * syy) : 0.0;
    }
    return m;
}

std::vector<MetricReport> evaluate_items(const std::vector<InstructionPair>& items,
                                         const std::vector<AttributeDef>& attributes,
                                         const ResponseSampler& sampler, std::size_t k) {
    if (k < 1) throw invalid_input("evaluate_items: k must be at least 1");

    auto find_def = [&](const std::string& name) -> const AttributeDef& {
        for (const auto& a : attributes)
            if (a.name == name) return a;
        throw dataset_error("instruction pair references unknown attribute " + name);
    };

    struct TaskData {
        bool classification = true;
        std::vector<Prediction> preds;
        std::vector<std::string> truth_labels;
        std::vector<double> truth_values;
        std::vector<std::string> label_set;
    };
    std::map<std::string, TaskData> tasks;

    for (const auto& item : items) {
        const AttributeDef& def = find_def(item.attribute);
        bool categorical_answer;
        std::vector<std::string> label_set;
        switch (item.paradigm) {
            case Paradigm::predictive:
                categorical_answer = def.is_categorical();
                label_set = def.labels;
                break;
            case Paradigm::judgment:
                categorical_answer = true;
                label_set = {"yes", "no"};
                break;
            case Paradigm::comparative:
                categorical_answer = true;
                label_set = def.is_categorical() ? std::vector<std::string>{"yes", "no"}
                                                 : std::vector<std::string>{"first", "second"};
                break;
        }

        std::vector<std::string> responses = sampler(item, k);
        std::vector<Prediction> sampled;
        for (const auto& r : responses)
            sampled.push_back(parse_response(r, categorical_answer, label_set));
        Prediction agg = self_consistency(sampled);

        std::string task = item.attribute + "/" + paradigm_name(item.paradigm);
        TaskData& data = tasks[task];
        data.classification = categorical_answer;
        data.label_set = label_set;
        data.preds.push_back(agg);
        if (categorical_answer)
            data.truth_labels.push_back(item.answer);
        else
            data.truth_values.push_back(std::stod(item.answer) / 100.0);
    }

    std::vector<MetricReport> reports;
    double macro_cls_acc = 0.0, macro_cls_mcc = 0.0, macro_cls_f1 = 0.0;
    double macro_reg_mae = 0.0, macro_reg_pcc = 0.0;
    std::size_t n_cls = 0, n_reg = 0;
    for (auto& [task, data] : tasks) {
        MetricReport r;
        r.task = task;
        r.classification = data.classification;
        r.n = data.preds.size();
        for (const auto& p : data.preds)
            if (!p.parseable()) ++r.n_unparseable;
        if (data.classification) {
            auto m = classification_metrics(data.preds, data.truth_labels, data.label_set);
            r.acc = m.acc;
            r.mcc = m.mcc;
            r.macro_f1 = m.macro_f1;
            macro_cls_acc += m.acc;
            macro_cls_mcc += m.mcc;
            macro_cls_f1 += m.macro_f1;
            ++n_cls;
        } else {
            auto m = regression_metrics(data.preds, data.truth_values);
            r.mae = m.mae;
            r.pcc = m.pcc;
            macro_reg_mae += m.mae;
            macro_reg_pcc += m.pcc;
            ++n_reg;
        }
        reports.push_back(r);
    }
    if (n_cls) {
        MetricReport r;
        r.task = "macro/classification";
        r.classification = true;
        r.acc = macro_cls_acc / n_cls;
        r.mcc = macro_cls_mcc / n_cls;
        r.macro_f1 = macro_cls_f1 / n_cls;
        r.n = n_cls;
        reports.push_back(r);
    }
    if (n_reg) {
        MetricReport r;
        r.task = "macro/regression";
        r.classification = false;
        r.mae = macro_reg_mae / n_reg;
        r.pcc = macro_reg_pcc / n_reg;
        r.n = n_reg;
        reports.push_back(r);
    }
    return reports;
}

std::string report_table(const std::vector<MetricReport>& reports) {
    std::ostringstream out;
    out << "task                              n   unparse   acc     mcc     f1      mae     pcc\n";
    for (const auto& r : reports) {
        char line[200];
        if (r.classification)
            std::snprintf(line, sizeof(line), "%-32s %5zu %6zu   %6.4f  %6.4f  %6.4f  -       -\n",
                          r.task.c_str(), r.n, r.n_unparseable, r.acc, r.mcc, r.macro_f1);
        else
            std::snprintf(line, sizeof(line), "%-32s %5zu %6zu   -       -       -       %6.4f  %6.4f\n",
                          r.task.c_str(), r.n, r.n_unparseable, r.mae, r.pcc);
        out << line;
    }
    return out.str();
}

void write_reports(const std::filesystem::path& path, const std::vector<MetricReport>& reports) {
    std::string out;
    for (const auto& r : reports) {
        json j{{"task", r.task},
               {"classification", r.classification},
               {"n", r.n},
               {"n_unparseable", r.n_unparseable}};
        if (r.classification) {
            j["acc"] = r.acc;
            j["mcc"] = r.mcc;
            j["macro_f1"] = r.macro_f1;
        } else {
            j["mae"] = r.mae;
            j["pcc"] = r.pcc;
        }
        out += j.dump() + "\n";
    }
    io::atomic_write_bytes(path, out);
}

}  // namespace fcni
