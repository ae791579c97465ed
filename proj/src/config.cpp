#include "qlip/config.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <variant>

#include "qlip/errors.hpp"
#include "qlip/rng.hpp"

namespace qlip {

namespace {

using Field = std::variant<int RunConfig::*, double RunConfig::*, std::string RunConfig::*>;

struct SchemaEntry {
    const char* key;  // "section.key"
    Field field;
};

const std::vector<SchemaEntry>& schema() {
    static const std::vector<SchemaEntry> entries = {
        {"run.seed", &RunConfig::seed},
        {"schedule.steps", &RunConfig::steps},
        {"schedule.beta_start", &RunConfig::beta_start},
        {"schedule.beta_end", &RunConfig::beta_end},
        {"model.data_dim", &RunConfig::data_dim},
        {"model.width", &RunConfig::width},
        {"model.quant_layers", &RunConfig::quant_layers},
        {"model.time_dim", &RunConfig::time_dim},
        {"menu.low", &RunConfig::menu_low},
        {"menu.med", &RunConfig::menu_med},
        {"menu.high", &RunConfig::menu_high},
        {"menu.weight_bits", &RunConfig::weight_bits},
        {"synth.classes", &RunConfig::classes},
        {"synth.modifiers", &RunConfig::modifiers},
        {"synth.embed_dim", &RunConfig::embed_dim},
        {"synth.max_level", &RunConfig::max_level},
        {"synth.center_scale", &RunConfig::center_scale},
        {"synth.modifier_scale", &RunConfig::modifier_scale},
        {"synth.noise_base", &RunConfig::noise_base},
        {"synth.noise_shrink", &RunConfig::noise_shrink},
        {"calibrate.reference", &RunConfig::reference},
        {"calibrate.prompts", &RunConfig::prompts},
        {"calibrate.oracle_components", &RunConfig::oracle_components},
        {"calibrate.quality_metric", &RunConfig::quality_metric},
        {"pretrain.iterations", &RunConfig::pretrain_iterations},
        {"pretrain.batch", &RunConfig::pretrain_batch},
        {"pretrain.lr", &RunConfig::pretrain_lr},
        {"t2q.hidden", &RunConfig::t2q_hidden},
        {"t2q.epochs", &RunConfig::t2q_epochs},
        {"t2q.batch", &RunConfig::t2q_batch},
        {"t2q.labels", &RunConfig::t2q_labels},
        {"t2q.lr", &RunConfig::t2q_lr},
        {"t2q.holdout", &RunConfig::t2q_holdout},
        {"q2b.lambda_bit", &RunConfig::lambda_bit},
        {"q2b.lr", &RunConfig::q2b_lr},
        {"q2b.group_size", &RunConfig::group_size},
        {"q2b.forced_high", &RunConfig::forced_high},
        {"q2b.variant", &RunConfig::variant},
        {"q2b.iterations", &RunConfig::q2b_iterations},
        {"sample.count", &RunConfig::sample_count},
        {"sample.batch", &RunConfig::sample_batch},
        {"sample.uniform_bits", &RunConfig::uniform_bits},
        {"sample.mode", &RunConfig::sample_mode},
        {"paths.cache_dir", &RunConfig::cache_dir},
        {"ablate.lambda_bit", &RunConfig::ablate_lambda_bit},
        {"ablate.group_size", &RunConfig::ablate_group_size},
        {"ablate.variant", &RunConfig::ablate_variant},
        {"ablate.menu", &RunConfig::ablate_menu},
        {"ablate.quality_metric", &RunConfig::ablate_quality_metric},
    };
    return entries;
}

std::string normalize_key(std::string key) {
    for (char& c : key)
        if (c == '-') c = '_';
    return key;
}

const SchemaEntry& find_entry(const std::string& key) {
    for (const auto& e : schema())
        if (key == e.key) return e;
    throw ConfigError("unknown config key '" + key + "'");
}

void set_value(RunConfig& cfg, const SchemaEntry& entry, const std::string& raw) {
    if (std::holds_alternative<int RunConfig::*>(entry.field)) {
        size_t pos = 0;
        int v = 0;
        try {
            v = std::stoi(raw, &pos);
        } catch (const std::exception&) {
            throw ConfigError(std::string("key '") + entry.key + "' needs an integer, got '" +
                              raw + "'");
        }
        if (pos != raw.size())
            throw ConfigError(std::string("key '") + entry.key + "' needs an integer, got '" +
                              raw + "'");
        cfg.*std::get<int RunConfig::*>(entry.field) = v;
    } else if (std::holds_alternative<double RunConfig::*>(entry.field)) {
        size_t pos = 0;
        double v = 0.0;
        try {
            v = std::stod(raw, &pos);
        } catch (const std::exception&) {
            throw ConfigError(std::string("key '") + entry.key + "' needs a number, got '" + raw +
                              "'");
        }
        if (pos != raw.size())
            throw ConfigError(std::string("key '") + entry.key + "' needs a number, got '" + raw +
                              "'");
        cfg.*std::get<double RunConfig::*>(entry.field) = v;
    } else {
        cfg.*std::get<std::string RunConfig::*>(entry.field) = raw;
    }
}

std::string get_value(const RunConfig& cfg, const SchemaEntry& entry) {
    if (std::holds_alternative<int RunConfig::*>(entry.field))
        return std::to_string(cfg.*std::get<int RunConfig::*>(entry.field));
    if (std::holds_alternative<double RunConfig::*>(entry.field)) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.17g", cfg.*std::get<double RunConfig::*>(entry.field));
        return buf;
    }
    return cfg.*std::get<std::string RunConfig::*>(entry.field);
}

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

// value text of one line: quoted string or bare token, optionally followed by
// a comment
std::string parse_value(const std::string& raw, const std::string& key) {
    std::string v = trim(raw);
    if (v.empty()) throw ConfigError("key '" + key + "' has no value");
    if (v.front() == '"') {
        const size_t close = v.find('"', 1);
        if (close == std::string::npos)
            throw ConfigError("key '" + key + "': unterminated string");
        const std::string rest = trim(v.substr(close + 1));
        if (!rest.empty() && rest.front() != '#')
            throw ConfigError("key '" + key + "': trailing text after string");
        return v.substr(1, close - 1);
    }
    const size_t hash = v.find('#');
    if (hash != std::string::npos) v = trim(v.substr(0, hash));
    if (v.empty()) throw ConfigError("key '" + key + "' has no value");
    return v;
}

bool known_section(const std::string& s) {
    for (const auto& e : schema()) {
        const std::string key = e.key;
        if (key.compare(0, s.size(), s) == 0 && key.size() > s.size() && key[s.size()] == '.')
            return true;
    }
    return false;
}

}  // namespace

RunConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    RunConfig cfg;
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t.front() == '#') continue;
        if (t.front() == '[') {
            if (t.back() != ']')
                throw ConfigError(path + ":" + std::to_string(lineno) + ": malformed section header");
            section = normalize_key(trim(t.substr(1, t.size() - 2)));
            if (!known_section(section))
                throw ConfigError(path + ":" + std::to_string(lineno) + ": unknown section [" +
                                  section + "]");
            continue;
        }
        const size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
        if (section.empty())
            throw ConfigError(path + ":" + std::to_string(lineno) + ": key outside any section");
        const std::string key = section + "." + normalize_key(trim(t.substr(0, eq)));
        const SchemaEntry& entry = find_entry(key);
        set_value(cfg, entry, parse_value(t.substr(eq + 1), key));
    }
    return cfg;
}

void apply_override(RunConfig& cfg, const std::string& key, const std::string& value) {
    const std::string norm = normalize_key(key);
    set_value(cfg, find_entry(norm), value);
}

void finalize_config(RunConfig& cfg) {
    if (cfg.steps < 1) throw ConfigError("schedule.steps must be >= 1");
    if (cfg.group_size == 0) cfg.group_size = std::max(1, cfg.steps / 5);
    if (cfg.forced_high == -1) cfg.forced_high = cfg.steps / 10;

    auto fail = [](const std::string& msg) { throw ConfigError(msg); };
    try {
        schedule_of(cfg);
        denoiser_of(cfg);
        synth_of(cfg).validate();
        menu_of(cfg).validate();
        q2b_of(cfg).validate();
        parse_scorer_kind(cfg.quality_metric);
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        fail(e.what());
    }
    if (cfg.embed_dim < 1) fail("synth.embed_dim must be >= 1");
    if (cfg.reference < 1) fail("calibrate.reference must be >= 1");
    if (cfg.prompts < 1) fail("calibrate.prompts must be >= 1");
    if (cfg.oracle_components < 1) fail("calibrate.oracle_components must be >= 1");
    if (cfg.pretrain_iterations < 1) fail("pretrain.iterations must be >= 1");
    if (cfg.pretrain_batch < 1) fail("pretrain.batch must be >= 1");
    if (!(cfg.pretrain_lr > 0.0)) fail("pretrain.lr must be positive");
    if (cfg.t2q_hidden < 1) fail("t2q.hidden must be >= 1");
    if (cfg.t2q_epochs < 0) fail("t2q.epochs must be >= 0");
    if (cfg.t2q_batch < 1) fail("t2q.batch must be >= 1");
    if (cfg.t2q_labels < 1) fail("t2q.labels must be >= 1");
    if (!(cfg.t2q_lr > 0.0)) fail("t2q.lr must be positive");
    if (cfg.t2q_holdout < 0.0 || cfg.t2q_holdout >= 1.0) fail("t2q.holdout must lie in [0, 1)");
    if (!(cfg.q2b_lr > 0.0)) fail("q2b.lr must be positive");
    if (cfg.q2b_iterations < 1) fail("q2b.iterations must be >= 1");
    if (cfg.sample_count < 1) fail("sample.count must be >= 1");
    if (cfg.sample_batch < 1) fail("sample.batch must be >= 1");
    if (cfg.sample_mode != "qlip" && cfg.sample_mode != "uniform" && cfg.sample_mode != "fp")
        fail("sample.mode must be qlip, uniform, or fp; got '" + cfg.sample_mode + "'");
    if (cfg.uniform_bits != 32 && (cfg.uniform_bits < 2 || cfg.uniform_bits > 16))
        fail("sample.uniform_bits must lie in [2, 16] or be 32");
}

std::vector<std::pair<std::string, std::string>> config_items(const RunConfig& cfg) {
    std::vector<std::pair<std::string, std::string>> items;
    items.reserve(schema().size());
    for (const auto& e : schema()) items.emplace_back(e.key, get_value(cfg, e));
    std::sort(items.begin(), items.end());
    return items;
}

namespace {

std::string hex16(uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string hash_filtered(const RunConfig& cfg,
                          const std::function<bool(const std::string&)>& keep) {
    std::string blob;
    for (const auto& [key, value] : config_items(cfg))
        if (keep(key)) blob += key + "=" + value + "\n";
    return hex16(hash64(blob));
}

bool in_scope(const std::string& key, const std::vector<std::string>& scope) {
    for (const auto& s : scope) {
        if (s.back() == '.') {
            if (key.compare(0, s.size(), s) == 0) return true;
        } else if (key == s) {
            return true;
        }
    }
    return false;
}

}  // namespace

std::string config_hash(const RunConfig& cfg) {
    return hash_filtered(cfg, [](const std::string& key) {
        return key.compare(0, 6, "paths.") != 0;
    });
}

std::string stage_scope_hash(const RunConfig& cfg, const std::string& stage) {
    // cumulative dependency sets; each stage extends its prerequisite's
    std::vector<std::string> scope = {"run.seed", "synth.", "model.data_dim"};
    const std::vector<std::string> pretrain_keys = {"schedule.", "model.", "pretrain.",
                                                    "calibrate.reference"};
    const std::vector<std::string> calibrate_keys = {"calibrate.", "q2b.group_size"};
    const std::vector<std::string> t2q_keys = {"t2q."};
    const std::vector<std::string> q2b_keys = {"q2b.", "menu."};
    const std::vector<std::string> sample_keys = {"sample."};

    auto extend = [&](const std::vector<std::string>& more) {
        scope.insert(scope.end(), more.begin(), more.end());
    };
    if (stage == "pretrain") {
        extend(pretrain_keys);
    } else if (stage == "calibrate") {
        extend(pretrain_keys), extend(calibrate_keys);
    } else if (stage == "t2q") {
        extend(pretrain_keys), extend(calibrate_keys), extend(t2q_keys);
    } else if (stage == "q2b") {
        extend(pretrain_keys), extend(calibrate_keys), extend(t2q_keys), extend(q2b_keys);
    } else if (stage == "sample" || stage == "evaluate") {
        extend(pretrain_keys), extend(calibrate_keys), extend(t2q_keys), extend(q2b_keys),
            extend(sample_keys);
    } else {
        throw std::invalid_argument("stage_scope_hash: unknown stage '" + stage + "'");
    }
    return hash_filtered(cfg,
                         [&](const std::string& key) { return in_scope(key, scope); });
}

DiffusionSchedule schedule_of(const RunConfig& cfg) {
    return DiffusionSchedule::linear(cfg.steps, cfg.beta_start, cfg.beta_end);
}

DenoiserConfig denoiser_of(const RunConfig& cfg) {
    DenoiserConfig d;
    d.data_dim = cfg.data_dim;
    d.width = cfg.width;
    d.quant_layers = cfg.quant_layers;
    d.time_dim = cfg.time_dim;
    d.cond_dim = cfg.embed_dim;
    d.validate();
    return d;
}

SynthConfig synth_of(const RunConfig& cfg) {
    SynthConfig s;
    s.classes = cfg.classes;
    s.modifiers = cfg.modifiers;
    s.embed_dim = cfg.embed_dim;
    s.data_dim = cfg.data_dim;
    s.center_scale = cfg.center_scale;
    s.modifier_scale = cfg.modifier_scale;
    s.noise_base = cfg.noise_base;
    s.noise_shrink = cfg.noise_shrink;
    s.max_level = cfg.max_level;
    return s;
}

BitMenu menu_of(const RunConfig& cfg) {
    BitMenu m;
    m.low = cfg.menu_low;
    m.med = cfg.menu_med;
    m.high = cfg.menu_high;
    m.weight_bits = cfg.weight_bits;
    return m;
}

Q2BSettings q2b_of(const RunConfig& cfg) {
    Q2BSettings st;
    st.layers = cfg.quant_layers;
    st.steps = cfg.steps;
    st.group_size = cfg.group_size;
    st.forced_high = cfg.forced_high;
    st.lambda_bit = cfg.lambda_bit;
    st.menu = menu_of(cfg);
    st.variant = parse_q2b_variant(cfg.variant);
    return st;
}

T2QTrainConfig t2q_train_of(const RunConfig& cfg) {
    return {cfg.t2q_epochs, cfg.t2q_lr, cfg.t2q_batch, cfg.t2q_holdout};
}

PretrainConfig pretrain_of(const RunConfig& cfg) {
    return {cfg.pretrain_iterations, cfg.pretrain_batch, cfg.pretrain_lr};
}

Q2BTrainConfig q2b_train_of(const RunConfig& cfg) {
    return {cfg.q2b_iterations, cfg.q2b_lr};
}

std::string cache_root(const RunConfig& cfg) {
    if (!cfg.cache_dir.empty()) return cfg.cache_dir;
    if (const char* env = std::getenv("QLIP_CACHE_DIR"); env != nullptr && *env != '\0')
        return env;
    return "./qlip-cache";
}

}  // namespace qlip
