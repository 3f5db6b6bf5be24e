#include "fcni/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "fcni/error.hpp"
#include "fcni/io.hpp"

namespace fcni {

using nlohmann::json;

const char* paradigm_name(Paradigm p) {
    switch (p) {
        case Paradigm::predictive: return "predictive";
        case Paradigm::judgment: return "judgment";
        case Paradigm::comparative: return "comparative";
    }
    return "?";
}

Paradigm paradigm_from_name(const std::string& name) {
    if (name == "predictive") return Paradigm::predictive;
    if (name == "judgment") return Paradigm::judgment;
    if (name == "comparative") return Paradigm::comparative;
    throw invalid_input("unknown paradigm: " + name);
}

int normalize_value(double x, double min, double max) {
    if (!(min < max)) throw config_error("normalize_value needs min < max");
    double c = std::clamp(x, min, max);
    double v = 100.0 * (c - min) / (max - min);
    return static_cast<int>(std::floor(v + 0.5));
}

std::vector<ValueBin> buckets_for(const AttributeDef& def) {
    if (def.kind != AttributeDef::Kind::continuous)
        throw invalid_input("buckets only apply to continuous attributes");
    if (!def.bins.empty()) return def.bins;
    std::vector<ValueBin> out;
    for (int k = 0; k < 10; ++k) {
        ValueBin b;
        b.lo = 10.0 * k;
        b.hi = (k == 9) ? 100.0 : 10.0 * (k + 1);
        int shown_hi = (k == 9) ? 100 : 10 * k + 9;
        b.name = "from " + std::to_string(10 * k) + " to " + std::to_string(shown_hi);
        out.push_back(b);
    }
    return out;
}

std::size_t bucket_of(const AttributeDef& def, double value) {
    if (!def.bins.empty()) {
        for (std::size_t i = 0; i < def.bins.size(); ++i)
            if (value >= def.bins[i].lo && value < def.bins[i].hi) return i;
        return def.bins.size() - 1;  // value == range max
    }
    int v = normalize_value(value, def.min, def.max);
    return std::min<std::size_t>(static_cast<std::size_t>(v / 10), 9);
}

std::string predictive_answer(const AttributeDef& def, const AttrValue& value) {
    if (def.kind == AttributeDef::Kind::categorical) return value.label;
    return std::to_string(normalize_value(value.num, def.min, def.max));
}

namespace {

void replace_all(std::string& text, const std::string& slot, const std::string& with) {
    std::size_t pos = 0;
    while ((pos = text.find(slot, pos)) != std::string::npos) {
        text.replace(pos, slot.size(), with);
        pos += with.size();
    }
}

bool has_slot(const std::string& text, const std::string& slot) {
    return text.find(slot) != std::string::npos;
}

std::string key_of(const std::string& attr, Paradigm p) {
    return attr + "/" + paradigm_name(p);
}

std::string fact_text(const AttributeDef& def, const AttrValue& value) {
    return "the " + def.name + " is " + predictive_answer(def, value);
}

}  // namespace

const std::vector<std::string>& PromptTemplateSet::get(const std::string& attribute,
                                                       Paradigm p) const {
    auto it = templates.find(key_of(attribute, p));
    if (it == templates.end() || it->second.empty())
        throw config_error("no templates for " + key_of(attribute, p));
    return it->second;
}

PromptTemplateSet PromptTemplateSet::defaults(const std::vector<AttributeDef>& attrs) {
    PromptTemplateSet set;
    for (const auto& def : attrs) {
        const std::string& a = def.name;
        set.templates[key_of(a, Paradigm::predictive)] = {
            "question : what is the " + a + " of this subject ? subject profile : {FCN} . answer :",
            "given the subject profile {FCN} , report the " + a + " . answer :",
            "subject profile : {FCN} . state the " + a + " of this subject . answer :",
        };
        if (def.is_categorical()) {
            set.templates[key_of(a, Paradigm::judgment)] = {
                "question : is the " + a + " of this subject {candidate} ? subject profile : {FCN} . answer :",
                "check : the " + a + " of this subject is {candidate} . subject profile : {FCN} . true or not ? answer :",
                "decide whether the " + a + " is {candidate} for the subject with profile {FCN} . answer :",
            };
            set.templates[key_of(a, Paradigm::comparative)] = {
                "question : do the two subjects have the same " + a + " ? first subject : {FCN_A} . second subject : {FCN_B} . answer :",
                "compare the " + a + " of the two subjects . first subject : {FCN_A} . second subject : {FCN_B} . do they match ? answer :",
                "first subject : {FCN_A} . second subject : {FCN_B} . is the " + a + " the same for both ? answer :",
            };
        } else {
            set.templates[key_of(a, Paradigm::judgment)] = {
                "question : is the " + a + " of this subject in the range {interval} ? subject profile : {FCN} . answer :",
                "check : the " + a + " of this subject falls in the range {interval} . subject profile : {FCN} . true or not ? answer :",
                "decide whether the " + a + " lies in the range {interval} for the subject with profile {FCN} . answer :",
            };
            set.templates[key_of(a, Paradigm::comparative)] = {
                "question : which subject has the higher " + a + " , the first or the second ? first subject : {FCN_A} . second subject : {FCN_B} . answer :",
                "compare the " + a + " of the two subjects . first subject : {FCN_A} . second subject : {FCN_B} . which one is higher ? answer :",
                "first subject : {FCN_A} . second subject : {FCN_B} . decide which subject has the greater " + a + " . answer :",
            };
        }
    }
    return set;
}

void PromptTemplateSet::validate(const std::vector<AttributeDef>& attrs) const {
    for (const auto& def : attrs) {
        for (Paradigm p : {Paradigm::predictive, Paradigm::judgment, Paradigm::comparative}) {
            const auto& list = get(def.name, p);
            for (const auto& t : list) {
                bool ok = true;
                switch (p) {
                    case Paradigm::predictive:
                        ok = has_slot(t, "{FCN}") && !has_slot(t, "{candidate}") &&
                             !has_slot(t, "{interval}");
                        break;
                    case Paradigm::judgment:
                        ok = has_slot(t, "{FCN}") &&
                             (def.is_categorical() ? has_slot(t, "{candidate}")
                                                   : has_slot(t, "{interval}"));
                        break;
                    case Paradigm::comparative:
                        ok = has_slot(t, "{FCN_A}") && has_slot(t, "{FCN_B}");
                        break;
                }
                if (!ok)
                    throw config_error("template for " + key_of(def.name, p) +
                                       " has slots inconsistent with its paradigm: " + t);
            }
        }
    }
}

PromptTemplateSet PromptTemplateSet::load_dir(const std::filesystem::path& dir,
                                              const std::vector<AttributeDef>& attrs) {
    PromptTemplateSet set;
    for (const auto& def : attrs) {
        for (Paradigm p : {Paradigm::predictive, Paradigm::judgment, Paradigm::comparative}) {
            auto path = dir / def.name / (std::string(paradigm_name(p)) + ".txt");
            std::ifstream in(path);
            if (!in) throw config_error("missing template file: " + path.string());
            std::vector<std::string> lines;
            std::string line;
            while (std::getline(in, line))
                if (!line.empty()) lines.push_back(line);
            set.templates[key_of(def.name, p)] = std::move(lines);
        }
    }
    set.validate(attrs);
    return set;
}

void PromptTemplateSet::save_dir(const std::filesystem::path& dir) const {
    for (const auto& [key, list] : templates) {
        auto slash = key.find('/');
        auto path = dir / key.substr(0, slash) / (key.substr(slash + 1) + ".txt");
        std::string out;
        for (const auto& t : list) out += t + "\n";
        io::atomic_write_bytes(path, out);
    }
}

std::vector<std::string> PromptTemplateSet::vocabulary_words() const {
    std::vector<std::string> out;
    for (const auto& [key, list] : templates)
        for (std::string t : list) {
            for (const char* slot : {"{FCN}", "{FCN_A}", "{FCN_B}", "{candidate}", "{interval}"})
                replace_all(t, slot, " ");
            out.push_back(t);
        }
    return out;
}

std::vector<std::string> vocabulary_words(const std::vector<AttributeDef>& attrs,
                                          const PromptTemplateSet& templates) {
    std::vector<std::string> words = templates.vocabulary_words();
    for (const auto& def : attrs) {
        words.push_back(def.name);
        if (def.is_categorical())
            for (const auto& l : def.labels) words.push_back(l);
        else
            for (const auto& b : buckets_for(def)) words.push_back(b.name);
    }
    for (const char* w : {"yes", "no", "first", "second", "from", "to", "the", "is", "<fcn>"})
        words.push_back(w);
    return words;
}

InstructionPair make_predictive(const SubjectRecord& subject, const AttributeDef& def,
                                const PromptTemplateSet& templates, Rng& rng) {
    InstructionPair pair;
    pair.paradigm = Paradigm::predictive;
    pair.attribute = def.name;
    pair.split = subject.split;
    std::string prompt = rng.pick(templates.get(def.name, Paradigm::predictive));
    replace_all(prompt, "{FCN}", "<fcn>");
    pair.prompt = prompt;
    pair.answer = predictive_answer(def, subject.values.at(def.name));
    return pair;
}

std::optional<InstructionPair> make_judgment(const SubjectRecord& subject,
                                             const AttributeDef& def,
                                             const PromptTemplateSet& templates, Rng& rng,
                                             bool want_positive) {
    const AttrValue& value = subject.values.at(def.name);
    std::string candidate;
    if (def.is_categorical()) {
        if (def.labels.size() < 2 && !want_positive) return std::nullopt;
        if (want_positive) {
            candidate = value.label;
        } else {
            std::vector<std::string> others;
            for (const auto& l : def.labels)
                if (l != value.label) others.push_back(l);
            if (others.empty()) return std::nullopt;
            candidate = rng.pick(others);
        }
    } else {
        auto buckets = buckets_for(def);
        if (buckets.size() < 2 && !want_positive) return std::nullopt;
        std::size_t truth = bucket_of(def, value.num);
        std::size_t chosen = truth;
        if (!want_positive) {
            std::vector<std::size_t> others;
            for (std::size_t i = 0; i < buckets.size(); ++i)
                if (i != truth) others.push_back(i);
            if (others.empty()) return std::nullopt;
            chosen = others[rng.index(others.size())];
        }
        candidate = buckets[chosen].name;
    }

    InstructionPair pair;
    pair.paradigm = Paradigm::judgment;
    pair.attribute = def.name;
    pair.split = subject.split;
    std::string prompt = rng.pick(templates.get(def.name, Paradigm::judgment));
    replace_all(prompt, def.is_categorical() ? "{candidate}" : "{interval}", candidate);
    replace_all(prompt, "{FCN}", "<fcn>");
    pair.prompt = prompt;
    pair.answer = want_positive ? "yes" : "no";
    return pair;
}

std::optional<InstructionPair> make_comparative(const SubjectRecord& a, const SubjectRecord& b,
                                                const AttributeDef& def,
                                                const PromptTemplateSet& templates, Rng& rng,
                                                int margin) {
    const AttrValue& va = a.values.at(def.name);
    const AttrValue& vb = b.values.at(def.name);

    InstructionPair pair;
    pair.paradigm = Paradigm::comparative;
    pair.attribute = def.name;
    pair.split = a.split;
    if (def.is_categorical()) {
        pair.answer = (va.label == vb.label) ? "yes" : "no";
    } else {
        int na = normalize_value(va.num, def.min, def.max);
        int nb = normalize_value(vb.num, def.min, def.max);
        if (std::abs(na - nb) < margin) return std::nullopt;
        pair.answer = na > nb ? "first" : "second";
    }
    std::string prompt = rng.pick(templates.get(def.name, Paradigm::comparative));
    replace_all(prompt, "{FCN_A}", "<fcn>");
    replace_all(prompt, "{FCN_B}", "<fcn>");
    pair.prompt = prompt;
    return pair;
}

namespace {

struct RefIndex {
    std::map<std::string, std::vector<const FcnRef*>> by_subject;

    const FcnRef* pick(const std::string& subject, Rng& rng) const {
        auto it = by_subject.find(subject);
        if (it == by_subject.end() || it->second.empty()) return nullptr;
        return it->second[rng.index(it->second.size())];
    }
};

}  // namespace

SynthResult synth_dataset(const std::vector<SubjectRecord>& subjects,
                          const std::vector<FcnRef>& fcn_refs,
                          const std::vector<AttributeDef>& attributes,
                          const PromptTemplateSet& templates, const SynthRequest& request) {
    templates.validate(attributes);
    if (request.stage != 1 && request.stage != 2)
        throw invalid_input("stage must be 1 or 2");

    std::vector<const SubjectRecord*> eligible;
    for (const auto& s : subjects)
        if (s.split == request.split) eligible.push_back(&s);

    RefIndex refs;
    const bool want_windowed = request.stage == 1;
    for (const auto& r : fcn_refs) {
        if (r.windowed != want_windowed) continue;
        if (r.split != request.split) continue;
        refs.by_subject[r.subject_id].push_back(&r);
    }

    SynthResult result;
    Rng rng(request.seed);
    std::size_t serial = 0;

    auto attach_ref = [&](InstructionPair& pair, const SubjectRecord& subject) -> bool {
        const FcnRef* ref = refs.pick(subject.subject_id, rng);
        if (!ref) return false;
        pair.fcn_refs.push_back(ref->path);
        return true;
    };
    auto finish = [&](InstructionPair pair, char prefix) {
        pair.stage = request.stage;
        char buf[16];
        std::snprintf(buf, sizeof(buf), "%c%06zu", prefix, ++serial);
        pair.id = buf;
        result.pairs.push_back(std::move(pair));
    };

    const std::size_t attempt_limit_factor = 60;

    // Predictive.
    if (!eligible.empty()) {
        std::size_t attempts = 0;
        const std::size_t limit = attempt_limit_factor * (request.n_predictive + 20);
        std::size_t made = 0;
        while (made < request.n_predictive && attempts++ < limit) {
            const SubjectRecord& s = *eligible[rng.index(eligible.size())];
            const AttributeDef& def = attributes[rng.index(attributes.size())];
            if (!s.values.count(def.name)) continue;  // skip signal
            InstructionPair pair = make_predictive(s, def, templates, rng);
            if (!attach_ref(pair, s)) continue;
            finish(std::move(pair), 'p');
            ++made;
        }
        result.shortfall_predictive = request.n_predictive - made;
    } else {
        result.shortfall_predictive = request.n_predictive;
    }

    // Judgment, alternating positive and negative over emitted pairs.
    if (!eligible.empty()) {
        std::size_t attempts = 0;
        const std::size_t limit = attempt_limit_factor * (request.n_judgment + 20);
        std::size_t made = 0;
        bool want_positive = true;
        while (made < request.n_judgment && attempts++ < limit) {
            const SubjectRecord& s = *eligible[rng.index(eligible.size())];
            const AttributeDef& def = attributes[rng.index(attributes.size())];
            if (!s.values.count(def.name)) continue;
            auto pair = make_judgment(s, def, templates, rng, want_positive);
            if (!pair) continue;
            if (!attach_ref(*pair, s)) continue;
            finish(std::move(*pair), 'j');
            ++made;
            want_positive = !want_positive;
        }
        result.shortfall_judgment = request.n_judgment - made;
    } else {
        result.shortfall_judgment = request.n_judgment;
    }

    // Comparative, alternating yes/no (categorical) and first/second
    // (continuous) over emitted pairs.
    if (eligible.size() >= 2) {
        std::size_t attempts = 0;
        const std::size_t limit = attempt_limit_factor * (request.n_comparative + 20);
        std::size_t made = 0;
        bool want_yes = true;
        bool want_first = true;
        while (made < request.n_comparative && attempts++ < limit) {
            const AttributeDef& def = attributes[rng.index(attributes.size())];
            const SubjectRecord* a = eligible[rng.index(eligible.size())];
            const SubjectRecord* b = eligible[rng.index(eligible.size())];
            if (a == b) continue;
            if (!a->values.count(def.name) || !b->values.count(def.name)) continue;

            if (def.is_categorical()) {
                bool same = a->values.at(def.name).label == b->values.at(def.name).label;
                if (same != want_yes) continue;
            } else {
                int na = normalize_value(a->values.at(def.name).num, def.min, def.max);
                int nb = normalize_value(b->values.at(def.name).num, def.min, def.max);
                if (std::abs(na - nb) < request.comparative_margin) continue;
                if ((na > nb) != want_first) std::swap(a, b);
            }

            auto pair = make_comparative(*a, *b, def, templates, rng, request.comparative_margin);
            if (!pair) continue;
            if (!attach_ref(*pair, *a)) continue;
            if (!attach_ref(*pair, *b)) continue;
            finish(std::move(*pair), 'c');
            ++made;
            if (def.is_categorical())
                want_yes = !want_yes;
            else
                want_first = !want_first;
        }
        result.shortfall_comparative = request.n_comparative - made;
    } else {
        result.shortfall_comparative = request.n_comparative;
    }

    return result;
}

std::vector<InstructionPair> synth_pretrain_pairs(const std::vector<SubjectRecord>& subjects,
                                                  const std::vector<AttributeDef>& attributes,
                                                  const PromptTemplateSet& templates,
                                                  std::size_t count, std::uint64_t seed,
                                                  int margin) {
    templates.validate(attributes);
    if (subjects.empty()) throw dataset_error("pretraining corpus needs subjects");
    std::vector<InstructionPair> out;
    Rng rng(seed);
    bool want_positive = true;
    bool want_yes = true;
    bool want_first = true;
    std::size_t serial = 0;
    std::size_t guard = 0;
    const std::size_t guard_limit = 200 * (count + 10);

    while (out.size() < count && guard++ < guard_limit) {
        const std::size_t k = out.size();
        Paradigm p = static_cast<Paradigm>(k % 3);
        const bool facts = (k / 3) % 2 == 0;  // alternate textual facts / null placeholder
        const AttributeDef& def = attributes[rng.index(attributes.size())];
        const SubjectRecord& s = subjects[rng.index(subjects.size())];
        if (!s.values.count(def.name)) continue;

        std::optional<InstructionPair> pair;
        std::string fact_a, fact_b;
        if (p == Paradigm::predictive) {
            pair = make_predictive(s, def, templates, rng);
            fact_a = fact_text(def, s.values.at(def.name));
        } else if (p == Paradigm::judgment) {
            pair = make_judgment(s, def, templates, rng, want_positive);
            if (!pair) continue;
            want_positive = !want_positive;
            fact_a = fact_text(def, s.values.at(def.name));
        } else {
            const SubjectRecord* a = &s;
            const SubjectRecord* b = &subjects[rng.index(subjects.size())];
            if (a == b || !b->values.count(def.name)) continue;
            if (def.is_categorical()) {
                bool same = a->values.at(def.name).label == b->values.at(def.name).label;
                if (same != want_yes) continue;
            } else {
                int na = normalize_value(a->values.at(def.name).num, def.min, def.max);
                int nb = normalize_value(b->values.at(def.name).num, def.min, def.max);
                if (std::abs(na - nb) < margin) continue;
                if ((na > nb) != want_first) std::swap(a, b);
            }
            pair = make_comparative(*a, *b, def, templates, rng, margin);
            if (!pair) continue;
            if (def.is_categorical())
                want_yes = !want_yes;
            else
                want_first = !want_first;
            fact_a = fact_text(def, a->values.at(def.name));
            fact_b = fact_text(def, b->values.at(def.name));
        }

        if (facts) {
            // Splice the textual statement where the FCN span would go.
            if (p == Paradigm::comparative) {
                replace_all(pair->prompt, "<fcn>", "{A}");
                auto first_pos = pair->prompt.find("{A}");
                auto second_pos = pair->prompt.find("{A}", first_pos + 3);
                pair->prompt.replace(second_pos, 3, fact_b);
                pair->prompt.replace(first_pos, 3, fact_a);
            } else {
                replace_all(pair->prompt, "<fcn>", fact_a);
            }
        }
        pair->stage = 0;
        pair->fcn_refs.clear();
        char buf[16];
        std::snprintf(buf, sizeof(buf), "t%06zu", ++serial);
        pair->id = buf;
        out.push_back(std::move(*pair));
    }
    if (out.size() < count)
        throw dataset_error("could not synthesize the requested pretraining corpus (" +
                            std::to_string(out.size()) + "/" + std::to_string(count) + ")");
    return out;
}

void write_pairs(const std::filesystem::path& path, const std::vector<InstructionPair>& pairs) {
    std::string out;
    for (const auto& p : pairs) {
        json j{{"id", p.id},
               {"paradigm", paradigm_name(p.paradigm)},
               {"attribute", p.attribute},
               {"fcn_refs", p.fcn_refs},
               {"prompt", p.prompt},
               {"answer", p.answer},
               {"stage", p.stage},
               {"split", p.split}};
        out += j.dump() + "\n";
    }
    io::atomic_write_bytes(path, out);
}

std::vector<InstructionPair> read_pairs(const std::filesystem::path& path) {
    std::vector<InstructionPair> out;
    std::istringstream in(io::read_bytes(path));
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        InstructionPair p;
        p.id = j.at("id").get<std::string>();
        p.paradigm = paradigm_from_name(j.at("paradigm").get<std::string>());
        p.attribute = j.at("attribute").get<std::string>();
        p.fcn_refs = j.at("fcn_refs").get<std::vector<std::string>>();
        p.prompt = j.at("prompt").get<std::string>();
        p.answer = j.at("answer").get<std::string>();
        p.stage = j.at("stage").get<int>();
        p.split = j.at("split").get<std::string>();
        out.push_back(std::move(p));
    }
    return out;
}

void write_fcn_manifest(const std::filesystem::path& path, const std::vector<FcnRef>& refs) {
    std::string out;
    for (const auto& r : refs) {
        json j{{"fcn_id", r.fcn_id},       {"subject_id", r.subject_id},
               {"path", r.path},           {"windowed", r.windowed},
               {"window_start", r.window_start}, {"split", r.split}};
        out += j.dump() + "\n";
    }
    io::atomic_write_bytes(path, out);
}

std::vector<FcnRef> read_fcn_manifest(const std::filesystem::path& path) {
    std::vector<FcnRef> out;
    std::istringstream in(io::read_bytes(path));
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        FcnRef r;
        r.fcn_id = j.at("fcn_id").get<std::string>();
        r.subject_id = j.at("subject_id").get<std::string>();
        r.path = j.at("path").get<std::string>();
        r.windowed = j.at("windowed").get<bool>();
        r.window_start = j.at("window_start").get<std::size_t>();
        r.split = j.at("split").get<std::string>();
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace fcni
