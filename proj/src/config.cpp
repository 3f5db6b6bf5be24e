#include "fcni/config.hpp"

#include <algorithm>
#include <sstream>
#include <thread>

#include "fcni/error.hpp"
#include "fcni/io.hpp"
#include "fcni/rng.hpp"

namespace fcni {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_field(const std::string& section, const std::string& key,
                            const std::string& value, const char* expected) {
    throw config_error("config field [" + section + "] " + key + " = '" + value +
                       "' is not a valid " + expected);
}

}  // namespace

Ini Ini::parse(const std::string& text) {
    Ini ini;
    std::istringstream in(text);
    std::string line;
    std::string section;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        if (t.front() == '[') {
            if (t.back() != ']')
                throw config_error("config line " + std::to_string(line_no) +
                                   ": unterminated section header");
            section = trim(t.substr(1, t.size() - 2));
            ini.sections[section];
            continue;
        }
        auto eq = t.find('=');
        if (eq == std::string::npos)
            throw config_error("config line " + std::to_string(line_no) +
                               ": expected 'key = value', got '" + t + "'");
        std::string key = trim(t.substr(0, eq));
        std::string value = trim(t.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
            value = value.substr(1, value.size() - 2);
        ini.sections[section][key] = value;
    }
    return ini;
}

Ini Ini::parse_file(const std::filesystem::path& path) {
    return parse(io::read_bytes(path));
}

bool Ini::has(const std::string& section, const std::string& key) const {
    auto s = sections.find(section);
    return s != sections.end() && s->second.count(key) > 0;
}

std::string Ini::get_str(const std::string& section, const std::string& key,
                         const std::string& fallback) const {
    auto s = sections.find(section);
    if (s == sections.end()) return fallback;
    auto k = s->second.find(key);
    return k == s->second.end() ? fallback : k->second;
}

double Ini::get_double(const std::string& section, const std::string& key,
                       double fallback) const {
    if (!has(section, key)) return fallback;
    const std::string v = get_str(section, key, "");
    try {
        std::size_t used = 0;
        double d = std::stod(v, &used);
        if (used != v.size()) bad_field(section, key, v, "number");
        return d;
    } catch (const config_error&) {
        throw;
    } catch (...) {
        bad_field(section, key, v, "number");
    }
}

std::int64_t Ini::get_int(const std::string& section, const std::string& key,
                          std::int64_t fallback) const {
    if (!has(section, key)) return fallback;
    const std::string v = get_str(section, key, "");
    try {
        std::size_t used = 0;
        std::int64_t i = std::stoll(v, &used);
        if (used != v.size()) bad_field(section, key, v, "integer");
        return i;
    } catch (const config_error&) {
        throw;
    } catch (...) {
        bad_field(section, key, v, "integer");
    }
}

std::uint64_t Ini::get_u64(const std::string& section, const std::string& key,
                           std::uint64_t fallback) const {
    if (!has(section, key)) return fallback;
    const std::string v = get_str(section, key, "");
    try {
        std::size_t used = 0;
        std::uint64_t i = std::stoull(v, &used);
        if (used != v.size()) bad_field(section, key, v, "unsigned integer");
        return i;
    } catch (const config_error&) {
        throw;
    } catch (...) {
        bad_field(section, key, v, "unsigned integer");
    }
}

bool Ini::get_bool(const std::string& section, const std::string& key, bool fallback) const {
    if (!has(section, key)) return fallback;
    std::string v = get_str(section, key, "");
    std::transform(v.begin(), v.end(), v.begin(), ::tolower);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    bad_field(section, key, v, "boolean");
}

std::vector<std::string> Ini::get_list(const std::string& section, const std::string& key) const {
    std::vector<std::string> out;
    std::string v = get_str(section, key, "");
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

RunConfig RunConfig::defaults() {
    RunConfig c;
    c.attributes = default_attributes();
    c.stage1.stage = 1;
    c.stage1.learning_rate = 1e-3;
    c.stage1.batch_size = 32;
    c.stage1.epochs = 1;
    c.stage1.warmup_ratio = 0.03;
    c.stage1.weight_decay = 0.0;
    c.stage2 = c.stage1;
    c.stage2.stage = 2;
    c.stage2.learning_rate = 1e-5;
    return c;
}

namespace {

AttributeDef attribute_from_ini(const Ini& ini, const std::string& section,
                                const std::string& name) {
    AttributeDef def;
    def.name = name;
    std::string kind = ini.get_str(section, "kind", "categorical");
    if (kind == "categorical") {
        def.kind = AttributeDef::Kind::categorical;
        def.labels = ini.get_list(section, "labels");
    } else if (kind == "continuous") {
        def.kind = AttributeDef::Kind::continuous;
        def.min = ini.get_double(section, "min", 0.0);
        def.max = ini.get_double(section, "max", 100.0);
        // bins: "lo:hi:name:weight" entries separated by ';'
        std::string bins = ini.get_str(section, "bins", "");
        std::stringstream ss(bins);
        std::string entry;
        while (std::getline(ss, entry, ';')) {
            entry = trim(entry);
            if (entry.empty()) continue;
            std::stringstream es(entry);
            std::string lo, hi, label, weight;
            if (!std::getline(es, lo, ':') || !std::getline(es, hi, ':') ||
                !std::getline(es, label, ':'))
                throw config_error("bad bin spec '" + entry + "' in [" + section + "]");
            ValueBin b;
            b.lo = std::stod(lo);
            b.hi = std::stod(hi);
            b.name = trim(label);
            b.weight = std::getline(es, weight, ':') ? std::stod(weight) : 1.0;
            def.bins.push_back(b);
        }
    } else {
        throw config_error("attribute " + name + " has unknown kind '" + kind + "'");
    }
    if (ini.has(section, "effect_size")) {
        auto subnets = ini.get_list(section, "effect_subnets");
        if (subnets.size() != 2)
            throw config_error("attribute " + name +
                               " needs effect_subnets = a,b alongside effect_size");
        AttributeEffect e;
        e.subnet_a = std::stoul(subnets[0]);
        e.subnet_b = std::stoul(subnets[1]);
        e.size = ini.get_double(section, "effect_size", 0.0);
        def.effect = e;
    }
    def.validate();
    return def;
}

void load_train_section(const Ini& ini, const std::string& section, TrainConfig& cfg) {
    cfg.learning_rate = ini.get_double(section, "learning_rate", cfg.learning_rate);
    cfg.batch_size = static_cast<std::size_t>(ini.get_int(section, "batch_size",
                                                          static_cast<std::int64_t>(cfg.batch_size)));
    cfg.epochs = static_cast<std::size_t>(
        ini.get_int(section, "epochs", static_cast<std::int64_t>(cfg.epochs)));
    cfg.warmup_ratio = ini.get_double(section, "warmup_ratio", cfg.warmup_ratio);
    cfg.weight_decay = ini.get_double(section, "weight_decay", cfg.weight_decay);
}

}  // namespace

RunConfig RunConfig::from_ini(const Ini& ini) {
    RunConfig c = defaults();

    c.d = static_cast<std::size_t>(ini.get_int("atlas", "d", static_cast<std::int64_t>(c.d)));
    c.subnets = static_cast<std::size_t>(
        ini.get_int("atlas", "subnets", static_cast<std::int64_t>(c.subnets)));
    c.partition_file = ini.get_str("atlas", "partition_file", c.partition_file);

    c.window_length = static_cast<std::size_t>(
        ini.get_int("windowing", "length", static_cast<std::int64_t>(c.window_length)));
    c.window_step = static_cast<std::size_t>(
        ini.get_int("windowing", "step", static_cast<std::int64_t>(c.window_step)));
    c.tau = ini.get_double("fcn", "tau", c.tau);

    c.gcn_hidden = static_cast<std::size_t>(
        ini.get_int("encoder", "gcn_hidden", static_cast<std::int64_t>(c.gcn_hidden)));
    c.proj_hidden = static_cast<std::size_t>(
        ini.get_int("encoder", "proj_hidden", static_cast<std::int64_t>(c.proj_hidden)));

    c.d_model = static_cast<std::size_t>(
        ini.get_int("lm", "d_model", static_cast<std::int64_t>(c.d_model)));
    c.lm_blocks = static_cast<std::size_t>(
        ini.get_int("lm", "blocks", static_cast<std::int64_t>(c.lm_blocks)));
    c.lm_heads = static_cast<std::size_t>(
        ini.get_int("lm", "heads", static_cast<std::int64_t>(c.lm_heads)));
    c.ffn_hidden = static_cast<std::size_t>(
        ini.get_int("lm", "ffn_hidden", static_cast<std::int64_t>(c.ffn_hidden)));
    c.max_seq = static_cast<std::size_t>(
        ini.get_int("lm", "max_seq", static_cast<std::int64_t>(c.max_seq)));

    c.subjects = static_cast<std::size_t>(
        ini.get_int("cohort", "subjects", static_cast<std::int64_t>(c.subjects)));
    c.timepoints = static_cast<std::size_t>(
        ini.get_int("cohort", "timepoints", static_cast<std::int64_t>(c.timepoints)));
    c.base_noise = ini.get_double("cohort", "base_noise", c.base_noise);
    c.split_ratio = ini.get_double("cohort", "split_ratio", c.split_ratio);

    // Attribute sections replace the default set entirely when present.
    std::vector<AttributeDef> explicit_attrs;
    for (const auto& [section, _] : ini.sections)
        if (section.rfind("attribute.", 0) == 0)
            explicit_attrs.push_back(attribute_from_ini(ini, section, section.substr(10)));
    if (!explicit_attrs.empty()) c.attributes = std::move(explicit_attrs);

    auto counts = [&](const char* key, SynthCounts fallback) {
        SynthCounts s = fallback;
        std::string raw = ini.get_str("synth", key, "");
        if (!raw.empty()) {
            auto list = ini.get_list("synth", key);
            if (list.size() != 3)
                throw config_error(std::string("synth counts '") + key +
                                   "' must be three comma-separated integers");
            s.predictive = std::stoul(list[0]);
            s.judgment = std::stoul(list[1]);
            s.comparative = std::stoul(list[2]);
        }
        return s;
    };
    c.stage1_counts = counts("stage1", c.stage1_counts);
    c.stage2_counts = counts("stage2", c.stage2_counts);
    c.test_counts = counts("test", c.test_counts);
    c.comparative_margin =
        static_cast<int>(ini.get_int("synth", "margin", c.comparative_margin));
    c.templates_dir = ini.get_str("synth", "templates_dir", c.templates_dir);

    c.pretrain_pairs = static_cast<std::size_t>(
        ini.get_int("pretrain", "pairs", static_cast<std::int64_t>(c.pretrain_pairs)));
    c.pretrain_epochs = static_cast<std::size_t>(
        ini.get_int("pretrain", "epochs", static_cast<std::int64_t>(c.pretrain_epochs)));
    c.pretrain_lr = ini.get_double("pretrain", "learning_rate", c.pretrain_lr);

    load_train_section(ini, "train.stage1", c.stage1);
    load_train_section(ini, "train.stage2", c.stage2);

    c.eval_k = static_cast<std::size_t>(
        ini.get_int("eval", "k", static_cast<std::int64_t>(c.eval_k)));
    c.eval_temperature = ini.get_double("eval", "temperature", c.eval_temperature);
    c.eval_prompt_hint = ini.get_str("eval", "prompt_hint", c.eval_prompt_hint);
    c.eval_max_items = static_cast<std::size_t>(
        ini.get_int("eval", "max_items", static_cast<std::int64_t>(c.eval_max_items)));

    c.seed = ini.get_u64("run", "seed", c.seed);
    c.threads = static_cast<std::size_t>(
        ini.get_int("run", "threads", static_cast<std::int64_t>(c.threads)));
    c.deterministic = ini.get_bool("run", "deterministic", c.deterministic);
    c.out_dir = ini.get_str("run", "out", c.out_dir);

    c.cohort_seed = ini.get_u64("cohort", "seed", 0);
    c.synth_seed = ini.get_u64("synth", "seed", 0);
    c.pretrain_seed = ini.get_u64("pretrain", "seed", 0);
    c.model_seed = ini.get_u64("run", "model_seed", 0);
    c.eval_seed = ini.get_u64("eval", "seed", 0);
    c.validate();
    return c;
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path))
        throw config_error("config file does not exist: " + path.string());
    return from_ini(Ini::parse_file(path));
}

void RunConfig::validate() const {
    if (d < 2) throw config_error("[atlas] d must be at least 2");
    if (subnets < 1 || subnets > d) throw config_error("[atlas] subnets must be in [1, d]");
    if (!partition_file.empty() && !std::filesystem::exists(partition_file))
        throw config_error("[atlas] partition_file does not exist: " + partition_file);
    if (window_length < 2) throw config_error("[windowing] length must be at least 2");
    if (window_step < 1) throw config_error("[windowing] step must be at least 1");
    if (tau < 0.0 || tau > 1.0) throw config_error("[fcn] tau must be in [0, 1]");
    if (d_model % lm_heads != 0)
        throw config_error("[lm] heads must divide d_model");
    if (split_ratio <= 0.0 || split_ratio >= 1.0)
        throw config_error("[cohort] split_ratio must be in (0, 1)");
    if (comparative_margin < 1 || comparative_margin > 100)
        throw config_error("[synth] margin must be in [1, 100]");
    if (!templates_dir.empty() && !std::filesystem::exists(templates_dir))
        throw config_error("[synth] templates_dir does not exist: " + templates_dir);
    if (eval_k < 1) throw config_error("[eval] k must be at least 1");
    stage1.validate();
    stage2.validate();
    for (const auto& a : attributes) a.validate();
}

AtlasPartition RunConfig::make_partition() const {
    if (!partition_file.empty()) {
        AtlasPartition p = AtlasPartition::load_csv(partition_file);
        if (p.roi_count != d)
            throw config_error("partition file has " + std::to_string(p.roi_count) +
                               " ROIs but [atlas] d = " + std::to_string(d));
        return p;
    }
    return AtlasPartition::make_default(d, subnets);
}

CohortSpec RunConfig::cohort_spec() const {
    CohortSpec spec;
    spec.n_subjects = subjects;
    spec.timepoints = timepoints;
    spec.partition = make_partition();
    spec.attributes = attributes;
    spec.base_noise = base_noise;
    spec.split_ratio = split_ratio;
    spec.seed = cohort_seed ? cohort_seed : Rng::derive(seed, 1);
    return spec;
}

std::size_t RunConfig::effective_threads() const {
    if (threads > 0) return threads;
    unsigned hw = std::thread::hardware_concurrency();
    return hw ? hw : 1;
}

std::string RunConfig::hash() const {
    // FNV-1a over a canonical dump of the fields that shape artifacts.
    std::ostringstream dump;
    dump << d << '|' << subnets << '|' << partition_file << '|' << window_length << '|'
         << window_step << '|' << tau << '|' << gcn_hidden << '|' << proj_hidden << '|' << d_model
         << '|' << lm_blocks << '|' << lm_heads << '|' << ffn_hidden << '|' << max_seq << '|'
         << subjects << '|' << timepoints << '|' << base_noise << '|' << split_ratio << '|'
         << stage1_counts.predictive << '|' << stage1_counts.judgment << '|'
         << stage1_counts.comparative << '|' << stage2_counts.predictive << '|'
         << stage2_counts.judgment << '|' << stage2_counts.comparative << '|'
         << test_counts.predictive << '|' << test_counts.judgment << '|'
         << test_counts.comparative << '|' << comparative_margin << '|' << pretrain_pairs << '|'
         << pretrain_epochs << '|' << pretrain_lr << '|' << stage1.learning_rate << '|'
         << stage1.batch_size << '|' << stage1.epochs << '|' << stage2.learning_rate << '|'
         << stage2.batch_size << '|' << stage2.epochs << '|' << eval_k << '|' << eval_temperature
         << '|' << seed;
    for (const auto& a : attributes) {
        dump << '|' << a.name << ':' << (a.is_categorical() ? "cat" : "cont");
        for (const auto& l : a.labels) dump << ',' << l;
        dump << ',' << a.min << ',' << a.max;
        if (a.effect)
            dump << ",effect" << a.effect->subnet_a << ':' << a.effect->subnet_b << ':'
                 << a.effect->size;
    }
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : dump.str()) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace fcni
