#include "qlip/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "qlip/diffusion.hpp"
#include "qlip/errors.hpp"
#include "qlip/metrics.hpp"
#include "qlip/q2b.hpp"
#include "qlip/quant.hpp"
#include "qlip/rng.hpp"
#include "qlip/synth.hpp"
#include "qlip/t2q.hpp"

namespace qlip {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string fmt17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string fmt6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            parts.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    parts.push_back(cur);
    return parts;
}

// Sweep values come from user config; reject anything trailing the number.
double sweep_double(const std::string& s, const std::string& what) {
    size_t pos = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &pos);
    } catch (const std::exception&) {
        throw ConfigError(what + ": '" + s + "' is not a number");
    }
    if (pos != s.size()) throw ConfigError(what + ": '" + s + "' is not a number");
    return v;
}

int sweep_int(const std::string& s, const std::string& what) {
    size_t pos = 0;
    long v = 0;
    try {
        v = std::stol(s, &pos);
    } catch (const std::exception&) {
        throw ConfigError(what + ": '" + s + "' is not an integer");
    }
    if (pos != s.size()) throw ConfigError(what + ": '" + s + "' is not an integer");
    return static_cast<int>(v);
}

// Artifact rows were written by this program; a parse failure means the cache
// is corrupt, not misconfigured.
double artifact_double(const std::string& s, const std::string& path) {
    size_t pos = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &pos);
    } catch (const std::exception&) {
        pos = std::string::npos;
    }
    if (pos != s.size()) throw std::runtime_error(path + ": corrupt numeric field '" + s + "'");
    return v;
}

int artifact_int(const std::string& s, const std::string& path) {
    size_t pos = 0;
    long v = 0;
    try {
        v = std::stol(s, &pos);
    } catch (const std::exception&) {
        pos = std::string::npos;
    }
    if (pos != s.size()) throw std::runtime_error(path + ": corrupt integer field '" + s + "'");
    return static_cast<int>(v);
}

void write_text_file(const std::string& path, const std::string& body) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << body;
    out.flush();
    if (!out) throw std::runtime_error("short write to " + path);
}

json load_manifest(const std::string& dir) {
    std::ifstream in(dir + "/manifest.json", std::ios::binary);
    if (!in) return json();
    return json::parse(in, nullptr, /*allow_exceptions=*/false);
}

// A stage directory counts as done only once its manifest says so and the
// scope hash matches; the manifest is always the last artifact written.
bool stage_complete(const std::string& dir, const std::string& scope_hash) {
    const json m = load_manifest(dir);
    if (m.is_discarded() || !m.is_object()) return false;
    return m.value("complete", false) && m.value("scope_hash", std::string()) == scope_hash;
}

void write_manifest(const std::string& dir, const std::string& stage, const std::string& scope,
                    const std::string& cfg_hash, const json& metrics,
                    const std::vector<std::string>& files) {
    json m;
    m["stage"] = stage;
    m["scope_hash"] = scope;
    m["config_hash"] = cfg_hash;
    m["complete"] = true;
    m["metrics"] = metrics;
    m["files"] = files;
    write_text_file(dir + "/manifest.json", m.dump(2) + "\n");
}

std::string require_stage(const Pipeline& p, const RunConfig& cfg, const std::string& stage,
                          const std::string& subcommand) {
    const std::string dir = p.stage_dir(stage);
    if (!stage_complete(dir, stage_scope_hash(cfg, stage)))
        throw PrereqError("no '" + subcommand + "' artifacts for this configuration; run `qlip " +
                          subcommand + "` first");
    return dir;
}

struct Core {
    SynthWorld world;
    Denoiser model;
    DiffusionSchedule sched;
};

Core load_core(const std::string& pretrain_dir) {
    const Checkpoint mc = Checkpoint::load(pretrain_dir + "/model.ckpt");
    const Checkpoint wc = Checkpoint::load(pretrain_dir + "/world.ckpt");
    return Core{SynthWorld::load(wc), Denoiser::load(mc), DiffusionSchedule::load(mc)};
}

uint64_t run_seed(const RunConfig& cfg) { return static_cast<uint64_t>(cfg.seed); }

// Matches the round-robin of generate_dataset so every stage walks prompts in
// the same (level, class) order.
PromptSample prompt_for_index(const SynthWorld& world, int i) {
    const int levels = world.cfg.max_level + 1;
    return world.canonical_prompt((i / levels) % world.cfg.classes, i % levels);
}

std::vector<TrainPair> as_train_pairs(const std::vector<SynthSample>& samples) {
    std::vector<TrainPair> pairs;
    pairs.reserve(samples.size());
    for (const auto& s : samples) pairs.push_back({s.x0, s.prompt.z});
    return pairs;
}

std::string plan_name(int i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "plan_%05d.csv", i);
    return buf;
}

struct SampleRow {
    int index = 0;
    int class_id = 0;
    int level = 0;
    bool has_q = false;
    double q = 0.0;
    Tensor x0;
};

void write_samples_csv(const std::string& path, const std::vector<SampleRow>& rows, int data_dim) {
    std::string body = "index,class,level,q";
    for (int j = 0; j < data_dim; ++j) body += ",x" + std::to_string(j);
    body += "\n";
    for (const auto& r : rows) {
        body += std::to_string(r.index) + "," + std::to_string(r.class_id) + "," +
                std::to_string(r.level) + ",";
        if (r.has_q) body += fmt17(r.q);
        for (int64_t j = 0; j < r.x0.numel(); ++j) body += "," + fmt17(r.x0.at(j));
        body += "\n";
    }
    write_text_file(path, body);
}

std::vector<SampleRow> read_samples_csv(const std::string& path, int data_dim) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(path + ": empty file");
    std::vector<SampleRow> rows;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto f = split(line, ',');
        if (static_cast<int>(f.size()) != 4 + data_dim)
            throw std::runtime_error(path + ": row has " + std::to_string(f.size()) +
                                     " fields, expected " + std::to_string(4 + data_dim));
        SampleRow r;
        r.index = artifact_int(f[0], path);
        r.class_id = artifact_int(f[1], path);
        r.level = artifact_int(f[2], path);
        r.has_q = !f[3].empty();
        if (r.has_q) r.q = artifact_double(f[3], path);
        r.x0 = Tensor({data_dim});
        for (int j = 0; j < data_dim; ++j)
            r.x0.at(j) = artifact_double(f[static_cast<size_t>(4 + j)], path);
        rows.push_back(std::move(r));
    }
    return rows;
}

std::map<std::string, std::string> read_metrics_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::string header, row;
    if (!std::getline(in, header) || !std::getline(in, row))
        throw std::runtime_error(path + ": expected a header and one data row");
    if (!header.empty() && header.back() == '\r') header.pop_back();
    if (!row.empty() && row.back() == '\r') row.pop_back();
    const auto names = split(header, ',');
    const auto values = split(row, ',');
    if (names.size() != values.size())
        throw std::runtime_error(path + ": header and row disagree on the column count");
    std::map<std::string, std::string> out;
    for (size_t i = 0; i < names.size(); ++i) out[names[i]] = values[i];
    return out;
}

// Per-sample plans for the evaluate/report consumers. Uniform and FP runs
// store a single shared plan; it is replicated so both run shapes read alike.
std::vector<BitPlan> load_run_plans(const std::string& sample_dir, const std::string& mode,
                                    int count) {
    std::vector<BitPlan> plans;
    if (mode == "qlip") {
        plans.reserve(static_cast<size_t>(count));
        for (int i = 0; i < count; ++i)
            plans.push_back(BitPlan::load_csv(sample_dir + "/plans/" + plan_name(i)));
    } else {
        plans.assign(static_cast<size_t>(count), BitPlan::load_csv(sample_dir + "/plan.csv"));
    }
    return plans;
}

}  // namespace

Pipeline::Pipeline(RunConfig cfg, bool force)
    : cfg_(std::move(cfg)), force_(force), root_(cache_root(cfg_)) {}

std::string Pipeline::stage_dir(const std::string& stage) const {
    return root_ + "/" + stage + "-" + stage_scope_hash(cfg_, stage).substr(0, 12);
}

StageResult Pipeline::pretrain() {
    const std::string scope = stage_scope_hash(cfg_, "pretrain");
    const std::string dir = stage_dir("pretrain");
    if (stage_complete(dir, scope)) return {dir, true};
    fs::create_directories(dir);

    const uint64_t seed = run_seed(cfg_);
    const SynthWorld world = SynthWorld::build(synth_of(cfg_), derive_seed(seed, "world"));
    const DiffusionSchedule sched = schedule_of(cfg_);
    Denoiser model = Denoiser::init(denoiser_of(cfg_), derive_seed(seed, "denoiser.init"));

    const auto reference =
        generate_dataset(world, cfg_.reference, derive_seed(seed, "dataset.reference"));
    const double loss = pretrain_denoiser(model, as_train_pairs(reference), sched,
                                          pretrain_of(cfg_), derive_seed(seed, "pretrain"));

    Checkpoint mc;
    model.save(mc);
    sched.save(mc);
    mc.save(dir + "/model.ckpt");
    Checkpoint wc;
    world.save(wc);
    wc.save(dir + "/world.ckpt");

    json metrics;
    metrics["pretrain_loss"] = loss;
    write_manifest(dir, "pretrain", scope, config_hash(cfg_), metrics,
                   {"model.ckpt", "world.ckpt"});
    return {dir, false};
}

StageResult Pipeline::calibrate() {
    const std::string scope = stage_scope_hash(cfg_, "calibrate");
    const std::string dir = stage_dir("calibrate");
    if (!force_ && stage_complete(dir, scope)) return {dir, true};
    const StageResult pre = pretrain();
    fs::create_directories(dir);

    const Core core = load_core(pre.dir);
    const uint64_t seed = run_seed(cfg_);

    const auto reference =
        generate_dataset(core.world, cfg_.reference, derive_seed(seed, "dataset.reference"));
    std::vector<Tensor> reference_x0;
    reference_x0.reserve(reference.size());
    for (const auto& s : reference) reference_x0.push_back(s.x0);

    const QualityOracle oracle =
        QualityOracle::fit(parse_scorer_kind(cfg_.quality_metric), core.world, reference_x0,
                           cfg_.oracle_components, derive_seed(seed, "oracle"));

    // Clip ranges from full-precision reverse passes over the canonical
    // prompt set, pooled per (layer, timestep group).
    const int group_size = cfg_.group_size;
    const int groups = (cfg_.steps + group_size - 1) / group_size;
    CalibrationSet pools(cfg_.quant_layers, groups, group_size);
    const BitPlan fp_plan(cfg_.quant_layers, cfg_.steps, 32);
    const StepObserver observer = [&](int layer, int step, const double* values, int64_t n) {
        pools.add(layer, (step - 1) / group_size, values, n);
    };
    for (int i = 0; i < cfg_.prompts; ++i) {
        const PromptSample p = prompt_for_index(core.world, i);
        ancestral_sample(core.model, core.sched, nullptr, nullptr, fp_plan, p.z,
                         derive_seed(seed, "calibrate.sample"), static_cast<uint64_t>(i),
                         &observer);
    }
    const RangeTable ranges = pools.finalize();

    Checkpoint rc;
    ranges.save(rc);
    rc.save(dir + "/ranges.ckpt");
    Checkpoint oc;
    oracle.save(oc);
    oc.save(dir + "/oracle.ckpt");
    export_dataset_csv(dir + "/dataset.csv", core.world, reference, &oracle);

    json metrics;
    metrics["bandwidth"] = median_heuristic_bandwidth(reference_x0);
    metrics["reference_count"] = cfg_.reference;
    metrics["calibration_prompts"] = cfg_.prompts;
    write_manifest(dir, "calibrate", scope, config_hash(cfg_), metrics,
                   {"ranges.ckpt", "oracle.ckpt", "dataset.csv"});
    return {dir, false};
}

StageResult Pipeline::train_t2q() {
    const std::string scope = stage_scope_hash(cfg_, "t2q");
    const std::string dir = stage_dir("t2q");
    if (!force_ && stage_complete(dir, scope)) return {dir, true};
    const std::string calib_dir = require_stage(*this, cfg_, "calibrate", "calibrate");
    const StageResult pre = pretrain();
    fs::create_directories(dir);

    const Core core = load_core(pre.dir);
    const QualityOracle oracle = QualityOracle::load(Checkpoint::load(calib_dir + "/oracle.ckpt"));
    const uint64_t seed = run_seed(cfg_);
    const uint64_t label_seed = derive_seed(seed, "t2q.labels");

    // Labels: oracle scores of full-precision generations per canonical prompt.
    const BitPlan fp_plan(cfg_.quant_layers, cfg_.steps, 32);
    std::vector<T2QPair> labels;
    labels.reserve(static_cast<size_t>(cfg_.t2q_labels));
    std::string label_csv = "index,class,level,q\n";
    for (int i = 0; i < cfg_.t2q_labels; ++i) {
        const PromptSample p = prompt_for_index(core.world, i);
        const SamplerOutput out = ancestral_sample(core.model, core.sched, nullptr, nullptr,
                                                   fp_plan, p.z, label_seed,
                                                   static_cast<uint64_t>(i));
        const double q = oracle.score(out.x0);
        labels.push_back({p.z, q});
        label_csv += std::to_string(i) + "," + std::to_string(p.class_id) + "," +
                     std::to_string(p.detail_level) + "," + fmt17(q) + "\n";
    }

    T2QModel model =
        T2QModel::init(cfg_.embed_dim, cfg_.t2q_hidden, derive_seed(seed, "t2q.init"));
    const T2QFit fit = qlip::train_t2q(model, labels, t2q_train_of(cfg_),
                                       derive_seed(seed, "t2q.train"));

    Checkpoint tc;
    model.save(tc);
    tc.save(dir + "/t2q.ckpt");
    write_text_file(dir + "/labels.csv", label_csv);

    json metrics;
    metrics["train_loss"] = fit.train_loss;
    metrics["val_loss"] = fit.val_loss;
    metrics["srocc"] = fit.srocc;
    metrics["plcc"] = fit.plcc;
    metrics["correlations_valid"] = fit.correlations_valid;
    metrics["train_count"] = fit.train_count;
    metrics["val_count"] = fit.val_count;
    write_manifest(dir, "t2q", scope, config_hash(cfg_), metrics, {"t2q.ckpt", "labels.csv"});
    return {dir, false};
}

StageResult Pipeline::train_q2b() {
    const std::string scope = stage_scope_hash(cfg_, "q2b");
    const std::string dir = stage_dir("q2b");
    if (!force_ && stage_complete(dir, scope)) return {dir, true};
    const std::string calib_dir = require_stage(*this, cfg_, "calibrate", "calibrate");
    const std::string t2q_dir = require_stage(*this, cfg_, "t2q", "train-t2q");
    const StageResult pre = pretrain();
    fs::create_directories(dir);

    const Core core = load_core(pre.dir);
    const RangeTable ranges = RangeTable::load(Checkpoint::load(calib_dir + "/ranges.ckpt"));
    const T2QModel t2q = T2QModel::load(Checkpoint::load(t2q_dir + "/t2q.ckpt"));
    const uint64_t seed = run_seed(cfg_);

    const auto reference =
        generate_dataset(core.world, cfg_.reference, derive_seed(seed, "dataset.reference"));
    const QuantWeights qw = QuantWeights::build(core.model, menu_of(cfg_).weight_bits);

    Q2BParams params = Q2BParams::init(q2b_of(cfg_));
    const Q2BTrainResult result =
        qlip::train_q2b(params, as_train_pairs(reference), t2q, core.model, qw, ranges,
                        core.sched, q2b_train_of(cfg_), derive_seed(seed, "q2b.train"));

    Checkpoint qc;
    params.save(qc);
    qc.save(dir + "/q2b.ckpt");

    json metrics;
    metrics["tail_loss"] = result.tail_loss;
    metrics["tail_mse"] = result.tail_mse;
    metrics["tail_bits"] = result.tail_bits;
    metrics["trainable_count"] = params.trainable_count();
    write_manifest(dir, "q2b", scope, config_hash(cfg_), metrics, {"q2b.ckpt"});
    return {dir, false};
}

StageResult Pipeline::sample() {
    const std::string scope = stage_scope_hash(cfg_, "sample");
    const std::string dir = stage_dir("sample");
    if (!force_ && stage_complete(dir, scope)) return {dir, true};

    const std::string mode = cfg_.sample_mode;
    std::string calib_dir, t2q_dir, q2b_dir;
    if (mode == "qlip") {
        calib_dir = require_stage(*this, cfg_, "calibrate", "calibrate");
        t2q_dir = require_stage(*this, cfg_, "t2q", "train-t2q");
        q2b_dir = require_stage(*this, cfg_, "q2b", "train-q2b");
    } else if (mode == "uniform") {
        calib_dir = require_stage(*this, cfg_, "calibrate", "calibrate");
    }
    const StageResult pre = pretrain();
    fs::create_directories(dir);

    const Core core = load_core(pre.dir);
    const uint64_t seed = run_seed(cfg_);
    const uint64_t eval_seed = derive_seed(seed, "sample.eval");
    const BitMenu menu = menu_of(cfg_);
    const int count = cfg_.sample_count;
    const int batch = cfg_.sample_batch;

    RangeTable ranges;
    if (!calib_dir.empty())
        ranges = RangeTable::load(Checkpoint::load(calib_dir + "/ranges.ckpt"));

    std::vector<SampleRow> rows(static_cast<size_t>(count));
    json metrics;
    std::vector<std::string> files = {"samples.csv"};

    if (mode == "qlip") {
        const T2QModel t2q = T2QModel::load(Checkpoint::load(t2q_dir + "/t2q.ckpt"));
        const Q2BParams params = Q2BParams::load(Checkpoint::load(q2b_dir + "/q2b.ckpt"));
        if (params.settings.layers != cfg_.quant_layers || params.settings.steps != cfg_.steps)
            throw PrereqError("q2b checkpoint shape does not match this configuration; run "
                              "`qlip train-q2b` first");

        const QuantWeights qw = QuantWeights::build(core.model, menu.weight_bits);
        std::vector<PromptSample> prompts(static_cast<size_t>(count));
        std::vector<BitPlan> personal(static_cast<size_t>(count));
        for (int i = 0; i < count; ++i) {
            const auto idx = static_cast<size_t>(i);
            prompts[idx] = prompt_for_index(core.world, i);
            const double q = t2q.predict(prompts[idx].z);
            personal[idx] = plan_for_quality(q, params);
            rows[idx] = {i, prompts[idx].class_id, prompts[idx].detail_level, true, q, Tensor()};
        }
        // Batched generation shares one merged (elementwise max) plan within
        // each consecutive group of `batch` prompts.
        std::vector<BitPlan> used(static_cast<size_t>(count));
        for (int start = 0; start < count; start += batch) {
            const int end = std::min(count, start + batch);
            const std::vector<BitPlan> group(personal.begin() + start, personal.begin() + end);
            const BitPlan merged = merge_bit_plans(group);
            for (int i = start; i < end; ++i) used[static_cast<size_t>(i)] = merged;
        }
        fs::create_directories(dir + "/plans");
        for (int i = 0; i < count; ++i) {
            const auto idx = static_cast<size_t>(i);
            const SamplerOutput out =
                ancestral_sample(core.model, core.sched, &qw, &ranges, used[idx], prompts[idx].z,
                                 eval_seed, static_cast<uint64_t>(i));
            rows[idx].x0 = out.x0;
            used[idx].save_csv(dir + "/plans/" + plan_name(i));
        }
        files.push_back("plans");
        metrics["fab"] = compute_fab(used);
        metrics["fab_per_sample_plans"] = compute_fab(personal);
    } else {
        const int bits = mode == "fp" ? 32 : cfg_.uniform_bits;
        const BitPlan plan(cfg_.quant_layers, cfg_.steps, bits);
        const QuantWeights qw =
            QuantWeights::build(core.model, mode == "fp" ? 32 : menu.weight_bits);
        for (int i = 0; i < count; ++i) {
            const PromptSample p = prompt_for_index(core.world, i);
            const SamplerOutput out =
                mode == "fp"
                    ? ancestral_sample(core.model, core.sched, nullptr, nullptr, plan, p.z,
                                       eval_seed, static_cast<uint64_t>(i))
                    : ancestral_sample(core.model, core.sched, &qw, &ranges, plan, p.z,
                                       eval_seed, static_cast<uint64_t>(i));
            rows[static_cast<size_t>(i)] = {i, p.class_id, p.detail_level, false, 0.0, out.x0};
        }
        plan.save_csv(dir + "/plan.csv");
        files.push_back("plan.csv");
        metrics["fab"] = compute_fab({plan});
    }

    write_samples_csv(dir + "/samples.csv", rows, cfg_.data_dim);
    metrics["mode"] = mode;
    metrics["count"] = count;
    metrics["batch"] = batch;
    write_manifest(dir, "sample", scope, config_hash(cfg_), metrics, files);
    return {dir, false};
}

StageResult Pipeline::evaluate() {
    const std::string scope = stage_scope_hash(cfg_, "evaluate");
    const std::string dir = stage_dir("evaluate");
    if (!force_ && stage_complete(dir, scope)) return {dir, true};
    const std::string sample_dir = require_stage(*this, cfg_, "sample", "sample");

    const json sm = load_manifest(sample_dir).value("metrics", json::object());
    const std::string mode = sm.value("mode", std::string());
    const int count = sm.value("count", 0);
    if (mode.empty() || count <= 0)
        throw std::runtime_error(sample_dir + "/manifest.json is missing the run metadata");

    const StageResult pre = pretrain();
    fs::create_directories(dir);
    const Core core = load_core(pre.dir);
    const uint64_t seed = run_seed(cfg_);

    const auto rows = read_samples_csv(sample_dir + "/samples.csv", cfg_.data_dim);
    if (static_cast<int>(rows.size()) != count)
        throw std::runtime_error(sample_dir + "/samples.csv holds " +
                                 std::to_string(rows.size()) + " rows, manifest says " +
                                 std::to_string(count));
    const std::vector<BitPlan> plans = load_run_plans(sample_dir, mode, count);

    const auto reference =
        generate_dataset(core.world, cfg_.reference, derive_seed(seed, "dataset.reference"));
    std::vector<Tensor> reference_x0;
    reference_x0.reserve(reference.size());
    for (const auto& s : reference) reference_x0.push_back(s.x0);
    std::vector<Tensor> generated_x0;
    generated_x0.reserve(rows.size());
    for (const auto& r : rows) generated_x0.push_back(r.x0);

    const double fab = compute_fab(plans);
    const CostModel cost = CostModel::for_denoiser(
        denoiser_of(cfg_), mode == "fp" ? 32 : menu_of(cfg_).weight_bits);
    double bitops = 0.0;
    for (const auto& plan : plans) bitops += compute_bitops(cost, plan);
    bitops /= static_cast<double>(count);

    const double bandwidth = median_heuristic_bandwidth(reference_x0);
    const double mmd2 = mmd_distance(generated_x0, reference_x0, bandwidth);

    const int levels = cfg_.max_level + 1;
    std::vector<std::vector<BitPlan>> per_level(static_cast<size_t>(levels));
    for (size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].level < 0 || rows[i].level >= levels)
            throw std::runtime_error(sample_dir + "/samples.csv: detail level " +
                                     std::to_string(rows[i].level) + " is out of range");
        per_level[static_cast<size_t>(rows[i].level)].push_back(plans[i]);
    }

    bool have_correlations = false;
    double srocc = 0.0, plcc = 0.0;
    if (mode == "qlip") {
        const std::string t2q_dir = require_stage(*this, cfg_, "t2q", "train-t2q");
        const json tm = load_manifest(t2q_dir).value("metrics", json::object());
        if (tm.value("correlations_valid", false)) {
            srocc = tm.value("srocc", 0.0);
            plcc = tm.value("plcc", 0.0);
            have_correlations = true;
        }
    }

    std::vector<std::pair<std::string, std::string>> columns;
    columns.emplace_back("mode", mode);
    columns.emplace_back("count", std::to_string(count));
    columns.emplace_back("fab", fmt17(fab));
    columns.emplace_back("bitops", fmt17(bitops));
    columns.emplace_back("mmd2", fmt17(mmd2));
    columns.emplace_back("srocc", have_correlations ? fmt17(srocc) : "");
    columns.emplace_back("plcc", have_correlations ? fmt17(plcc) : "");
    for (int l = 0; l < levels; ++l) {
        const auto& bucket = per_level[static_cast<size_t>(l)];
        columns.emplace_back("fab_level" + std::to_string(l),
                             bucket.empty() ? "" : fmt17(compute_fab(bucket)));
    }
    std::string header, row;
    for (size_t i = 0; i < columns.size(); ++i) {
        if (i) {
            header += ',';
            row += ',';
        }
        header += columns[i].first;
        row += columns[i].second;
    }
    write_text_file(dir + "/metrics.csv", header + "\n" + row + "\n");

    json metrics;
    metrics["mode"] = mode;
    metrics["count"] = count;
    metrics["fab"] = fab;
    metrics["bitops"] = bitops;
    metrics["mmd2"] = mmd2;
    metrics["bandwidth"] = bandwidth;
    if (have_correlations) {
        metrics["srocc"] = srocc;
        metrics["plcc"] = plcc;
    }
    for (int l = 0; l < levels; ++l) {
        const auto& bucket = per_level[static_cast<size_t>(l)];
        if (!bucket.empty())
            metrics["fab_level" + std::to_string(l)] = compute_fab(bucket);
    }
    write_manifest(dir, "evaluate", scope, config_hash(cfg_), metrics, {"metrics.csv"});
    return {dir, false};
}

std::string Pipeline::report(const std::string& out_dir) {
    const std::string eval_dir = require_stage(*this, cfg_, "evaluate", "evaluate");
    const std::string sample_dir = require_stage(*this, cfg_, "sample", "sample");
    const std::string target = out_dir.empty() ? eval_dir : out_dir;
    fs::create_directories(target);

    const auto metrics = read_metrics_csv(eval_dir + "/metrics.csv");
    const std::string mode = metrics.at("mode");
    const int count = artifact_int(metrics.at("count"), eval_dir + "/metrics.csv");
    const auto rows = read_samples_csv(sample_dir + "/samples.csv", cfg_.data_dim);
    const std::vector<BitPlan> plans = load_run_plans(sample_dir, mode, count);
    const json sample_metrics = load_manifest(sample_dir).value("metrics", json::object());

    const int levels = cfg_.max_level + 1;
    std::vector<std::vector<BitPlan>> per_level(static_cast<size_t>(levels));
    for (size_t i = 0; i < rows.size() && i < plans.size(); ++i)
        per_level[static_cast<size_t>(rows[i].level)].push_back(plans[i]);

    std::string level_csv = "level,count,fab\n";
    for (int l = 0; l < levels; ++l) {
        const auto& bucket = per_level[static_cast<size_t>(l)];
        level_csv += std::to_string(l) + "," + std::to_string(bucket.size()) + ",";
        if (!bucket.empty()) level_csv += fmt17(compute_fab(bucket));
        level_csv += "\n";
    }
    write_text_file(target + "/fab_by_level.csv", level_csv);

    // (layer, bits) usage counts over every generated sample and step.
    std::map<std::pair<int, int>, long long> histogram;
    for (const auto& plan : plans)
        for (int k = 0; k < plan.layers; ++k)
            for (int step = 1; step <= plan.steps; ++step) ++histogram[{k, plan.at(k, step)}];
    std::string histo_csv = "layer,bits,count\n";
    std::map<int, long long> bits_totals;
    long long total = 0;
    for (const auto& [key, n] : histogram) {
        histo_csv += std::to_string(key.first) + "," + std::to_string(key.second) + "," +
                     std::to_string(n) + "\n";
        bits_totals[key.second] += n;
        total += n;
    }
    write_text_file(target + "/bit_histogram.csv", histo_csv);

    std::string md = "# QLIP run report\n\n";
    md += "- mode: " + mode + "\n";
    md += "- samples: " + std::to_string(count) + " (batch " + std::to_string(cfg_.sample_batch) +
          ")\n";
    md += "- seed: " + std::to_string(cfg_.seed) + "\n";
    md += "- bit menu: {" + std::to_string(cfg_.menu_low) + ", " + std::to_string(cfg_.menu_med) +
          ", " + std::to_string(cfg_.menu_high) + "}, weights " +
          std::to_string(cfg_.weight_bits) + "-bit\n";
    md += "- config hash: " + config_hash(cfg_) + "\n";
    md += "\n## Metrics\n\n| metric | value |\n| --- | --- |\n";
    const auto metric_row = [&](const std::string& label, const std::string& key) {
        const auto it = metrics.find(key);
        if (it == metrics.end() || it->second.empty()) return;
        md += "| " + label + " | " + fmt6(artifact_double(it->second, key)) + " |\n";
    };
    metric_row("FAB (bits)", "fab");
    metric_row("BitOPs per sample", "bitops");
    metric_row("MMD^2 vs reference", "mmd2");
    metric_row("T2Q SROCC", "srocc");
    metric_row("T2Q PLCC", "plcc");

    md += "\n## FAB by detail level\n\n| level | samples | FAB |\n| --- | --- | --- |\n";
    for (int l = 0; l < levels; ++l) {
        const auto& bucket = per_level[static_cast<size_t>(l)];
        md += "| " + std::to_string(l) + " | " + std::to_string(bucket.size()) + " | " +
              (bucket.empty() ? std::string("-") : fmt6(compute_fab(bucket))) + " |\n";
    }

    md += "\n## Bit usage\n\n| bits | share |\n| --- | --- |\n";
    for (const auto& [bits, n] : bits_totals)
        md += "| " + std::to_string(bits) + " | " +
              fmt6(static_cast<double>(n) / static_cast<double>(total)) + " |\n";

    if (cfg_.sample_batch > 1 && sample_metrics.contains("fab_per_sample_plans")) {
        const double merged = sample_metrics.value("fab", 0.0);
        const double personal = sample_metrics.value("fab_per_sample_plans", 0.0);
        md += "\nBatched sampling merges the per-prompt plans elementwise (maximum), so the "
              "executed FAB is " +
              fmt6(merged) + " bits against " + fmt6(personal) +
              " bits for per-sample plans (+" + fmt6(merged - personal) + ").\n";
    }
    md += "\nDetails: fab_by_level.csv, bit_histogram.csv, and metrics.csv next to this file.\n";
    write_text_file(target + "/report.md", md);
    if (target != eval_dir)
        fs::copy_file(eval_dir + "/metrics.csv", target + "/metrics.csv",
                      fs::copy_options::overwrite_existing);
    return target;
}

std::string Pipeline::ablate(const std::string& axis_in) {
    std::string axis = axis_in;
    for (auto& c : axis)
        if (c == '-') c = '_';
    if (axis == "M") axis = "group_size";

    std::string list;
    if (axis == "lambda_bit") {
        list = cfg_.ablate_lambda_bit;
    } else if (axis == "group_size") {
        list = cfg_.ablate_group_size;
    } else if (axis == "variant") {
        list = cfg_.ablate_variant;
    } else if (axis == "menu") {
        list = cfg_.ablate_menu;
    } else if (axis == "quality_metric") {
        list = cfg_.ablate_quality_metric;
    } else {
        throw ConfigError("unknown ablation axis '" + axis_in +
                          "' (expected lambda_bit, group_size, variant, menu, or "
                          "quality_metric)");
    }

    std::vector<std::string> values;
    for (const auto& piece : split(list, ',')) {
        const std::string v = trim(piece);
        if (!v.empty()) values.push_back(v);
    }
    if (values.empty())
        throw ConfigError("ablation axis '" + axis + "' has an empty value list");

    const std::string dir = root_ + "/ablate-" + axis + "-" + config_hash(cfg_).substr(0, 12);
    fs::create_directories(dir);

    std::string sweep = "axis,value,fab,bitops,mmd2,srocc,plcc\n";
    json runs = json::array();
    for (const auto& value : values) {
        RunConfig c = cfg_;
        if (axis == "lambda_bit") {
            c.lambda_bit = sweep_double(value, "ablate.lambda_bit");
        } else if (axis == "group_size") {
            c.group_size = sweep_int(value, "ablate.group_size");
        } else if (axis == "variant") {
            c.variant = value;
        } else if (axis == "menu") {
            const auto parts = split(value, ':');
            if (parts.size() != 4)
                throw ConfigError("ablate.menu value '" + value +
                                  "' must look like low:med:high:weight_bits");
            c.menu_low = sweep_int(parts[0], "ablate.menu");
            c.menu_med = sweep_int(parts[1], "ablate.menu");
            c.menu_high = sweep_int(parts[2], "ablate.menu");
            c.weight_bits = sweep_int(parts[3], "ablate.menu");
        } else {
            c.quality_metric = value;
        }
        finalize_config(c);

        Pipeline sub(c, false);
        if (c.sample_mode == "qlip") {
            sub.calibrate();
            sub.train_t2q();
            sub.train_q2b();
        } else if (c.sample_mode == "uniform") {
            sub.calibrate();
        }
        sub.sample();
        const StageResult ev = sub.evaluate();

        const auto m = read_metrics_csv(ev.dir + "/metrics.csv");
        sweep += axis + "," + value + "," + m.at("fab") + "," + m.at("bitops") + "," +
                 m.at("mmd2") + "," + m.at("srocc") + "," + m.at("plcc") + "\n";
        json run;
        run["value"] = value;
        run["evaluate_dir"] = ev.dir;
        runs.push_back(run);
    }
    write_text_file(dir + "/sweep.csv", sweep);

    json metrics;
    metrics["axis"] = axis;
    metrics["values"] = values;
    metrics["runs"] = runs;
    write_manifest(dir, "ablate", config_hash(cfg_), config_hash(cfg_), metrics, {"sweep.csv"});
    return dir;
}

}  // namespace qlip
