#include "qlip/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <unordered_map>

#include "qlip/errors.hpp"
#include "qlip/quant.hpp"
#include "qlip/rng.hpp"

namespace qlip {

void SynthConfig::validate() const {
    if (classes < 1) throw std::runtime_error("synth: classes must be >= 1");
    if (modifiers < 1 || modifiers % classes != 0)
        throw std::runtime_error("synth: modifiers (" + std::to_string(modifiers) +
                                 ") must be a positive multiple of classes (" +
                                 std::to_string(classes) + ")");
    if (embed_dim < 1 || data_dim < 1) throw std::runtime_error("synth: dims must be >= 1");
    if (max_level < 0 || max_level > modifiers_per_class())
        throw std::runtime_error("synth: max_level must lie in [0, modifiers/classes]");
    if (noise_base <= 0.0 || noise_shrink <= 0.0)
        throw std::runtime_error("synth: noise parameters must be positive");
}

Vocabulary::Vocabulary(const SynthConfig& cfg) {
    names_.reserve(static_cast<size_t>(cfg.vocab_size()));
    for (int c = 0; c < cfg.classes; ++c) names_.push_back("class_" + std::to_string(c));
    for (int j = 0; j < cfg.modifiers; ++j) names_.push_back("mod_" + std::to_string(j));
}

const std::string& Vocabulary::name(int id) const {
    if (id < 0 || id >= size())
        throw std::runtime_error("vocabulary: token id " + std::to_string(id) +
                                 " outside [0, " + std::to_string(size()) + ")");
    return names_[static_cast<size_t>(id)];
}

int Vocabulary::id(const std::string& name) const {
    for (int i = 0; i < size(); ++i)
        if (names_[static_cast<size_t>(i)] == name) return i;
    throw std::runtime_error("vocabulary: unknown token '" + name + "'");
}

SynthWorld SynthWorld::build(const SynthConfig& cfg, uint64_t seed) {
    cfg.validate();
    SynthWorld w;
    w.cfg = cfg;
    w.vocab = Vocabulary(cfg);

    w.embedding = Tensor::zeros({cfg.vocab_size(), cfg.embed_dim});
    RngStream emb(seed, "synth.embed");
    const double emb_sd = 1.0 / std::sqrt(static_cast<double>(cfg.embed_dim));
    for (auto& v : w.embedding.data) v = emb_sd * emb.normal();

    w.centers = Tensor::zeros({cfg.classes, cfg.data_dim});
    RngStream cen(seed, "synth.centers");
    for (auto& v : w.centers.data) v = cfg.center_scale * cen.normal();

    w.offsets = Tensor::zeros({cfg.modifiers, cfg.data_dim});
    RngStream off(seed, "synth.offsets");
    for (auto& v : w.offsets.data) v = cfg.modifier_scale * off.normal();
    return w;
}

Tensor SynthWorld::conditional_mean(int class_id, int level) const {
    if (class_id < 0 || class_id >= cfg.classes)
        throw std::runtime_error("synth: class id " + std::to_string(class_id) + " outside [0, " +
                                 std::to_string(cfg.classes) + ")");
    if (level < 0 || level > cfg.max_level)
        throw std::runtime_error("synth: detail level " + std::to_string(level) +
                                 " outside [0, " + std::to_string(cfg.max_level) + "]");
    Tensor mu({cfg.data_dim});
    for (int j = 0; j < cfg.data_dim; ++j) mu.at(j) = centers.at2(class_id, j);
    const int base = class_id * cfg.modifiers_per_class();
    for (int l = 0; l < level; ++l)
        for (int j = 0; j < cfg.data_dim; ++j) mu.at(j) += offsets.at2(base + l, j);
    return mu;
}

double SynthWorld::residual_sigma(int level) const {
    return cfg.noise_base * std::pow(cfg.noise_shrink, level);
}

PromptSample SynthWorld::canonical_prompt(int class_id, int level) const {
    conditional_mean(class_id, level);  // reuse the bounds checks
    PromptSample p;
    p.class_id = class_id;
    p.detail_level = level;
    p.tokens.push_back(class_id);
    const int base = cfg.classes + class_id * cfg.modifiers_per_class();
    for (int l = 0; l < level; ++l) p.tokens.push_back(base + l);
    p.z = encode_prompt(p.tokens);
    return p;
}

Tensor SynthWorld::encode_prompt(const std::vector<int>& tokens) const {
    if (tokens.empty()) throw std::runtime_error("encode_prompt: empty token list");
    Tensor z = Tensor::zeros({cfg.embed_dim});
    for (int id : tokens) {
        vocab.name(id);  // bounds check with a token-id message
        for (int j = 0; j < cfg.embed_dim; ++j) z.at(j) += embedding.at2(id, j);
    }
    for (auto& v : z.data) v /= static_cast<double>(tokens.size());
    return z;
}

Tensor SynthWorld::encode_prompt(const std::vector<std::string>& tokens) const {
    std::vector<int> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(vocab.id(t));
    return encode_prompt(ids);
}

void SynthWorld::save(Checkpoint& ck) const {
    ck.put_i32("synth/meta", {5},
               {cfg.classes, cfg.modifiers, cfg.embed_dim, cfg.data_dim, cfg.max_level});
    ck.put_tensor("synth/geometry", Tensor({4}, {cfg.center_scale, cfg.modifier_scale,
                                                 cfg.noise_base, cfg.noise_shrink}));
    ck.put_tensor("synth/embedding", embedding);
    ck.put_tensor("synth/centers", centers);
    ck.put_tensor("synth/offsets", offsets);
}

SynthWorld SynthWorld::load(const Checkpoint& ck) {
    const auto meta = ck.i32("synth/meta");
    if (meta.size() != 5) throw std::runtime_error("synth: malformed meta record");
    const Tensor geo = ck.tensor("synth/geometry");
    SynthConfig cfg;
    cfg.classes = meta[0];
    cfg.modifiers = meta[1];
    cfg.embed_dim = meta[2];
    cfg.data_dim = meta[3];
    cfg.max_level = meta[4];
    cfg.center_scale = geo.at(0);
    cfg.modifier_scale = geo.at(1);
    cfg.noise_base = geo.at(2);
    cfg.noise_shrink = geo.at(3);
    cfg.validate();
    SynthWorld w;
    w.cfg = cfg;
    w.vocab = Vocabulary(cfg);
    w.embedding = ck.tensor("synth/embedding");
    w.centers = ck.tensor("synth/centers");
    w.offsets = ck.tensor("synth/offsets");
    return w;
}

std::vector<SynthSample> generate_dataset(const SynthWorld& world, int n, uint64_t seed) {
    if (n < 1) throw std::runtime_error("generate_dataset: n must be >= 1");
    const int levels = world.cfg.max_level + 1;
    std::vector<SynthSample> out;
    out.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const int level = i % levels;
        const int cls = (i / levels) % world.cfg.classes;
        SynthSample s;
        s.prompt = world.canonical_prompt(cls, level);
        s.x0 = world.conditional_mean(cls, level);
        const double sigma = world.residual_sigma(level);
        RngStream noise(seed, "synth.sample." + std::to_string(i));
        for (auto& v : s.x0.data) v += sigma * noise.normal();
        out.push_back(std::move(s));
    }
    return out;
}

ScorerKind parse_scorer_kind(const std::string& s) {
    if (s == "gmm") return ScorerKind::gmm;
    if (s == "center") return ScorerKind::center;
    throw std::runtime_error("quality metric must be 'gmm' or 'center', got '" + s + "'");
}

std::string scorer_kind_name(ScorerKind k) {
    return k == ScorerKind::gmm ? "gmm" : "center";
}

double QualityOracle::raw(const Tensor& x) const {
    if (kind == ScorerKind::gmm) return gmm.log_density(x);
    double best = -std::numeric_limits<double>::infinity();
    for (const Tensor& c : centers) {
        double d2 = 0.0;
        for (int64_t j = 0; j < x.numel(); ++j) {
            const double d = x.at(j) - c.at(j);
            d2 += d * d;
        }
        best = std::max(best, -std::sqrt(d2));
    }
    return best;
}

double QualityOracle::score(const Tensor& x) const {
    const double q = (raw(x) - lo) / (hi - lo);
    return std::clamp(q, 0.0, 1.0);
}

QualityOracle QualityOracle::fit(ScorerKind kind, const SynthWorld& world,
                                 const std::vector<Tensor>& reference, int n_components,
                                 uint64_t seed) {
    if (kind == ScorerKind::gmm && static_cast<int>(reference.size()) < 10 * n_components)
        throw std::runtime_error("quality oracle: need at least " +
                                 std::to_string(10 * n_components) + " reference points for " +
                                 std::to_string(n_components) + " components, got " +
                                 std::to_string(reference.size()));
    QualityOracle o;
    o.kind = kind;
    if (kind == ScorerKind::gmm) {
        o.gmm = GmmModel::fit(reference, n_components, seed);
    } else {
        for (int c = 0; c < world.cfg.classes; ++c)
            for (int l = 0; l <= world.cfg.max_level; ++l)
                o.centers.push_back(world.conditional_mean(c, l));
    }
    std::vector<double> raws;
    raws.reserve(reference.size());
    for (const Tensor& x : reference) raws.push_back(o.raw(x));
    o.lo = percentile(raws, 1.0);
    o.hi = percentile(raws, 99.0);
    if (!(o.hi > o.lo))
        throw NumericError("quality oracle: degenerate score range [" + std::to_string(o.lo) +
                           ", " + std::to_string(o.hi) + "]");
    return o;
}

void QualityOracle::save(Checkpoint& ck) const {
    ck.put_i32("oracle/kind", {1}, {kind == ScorerKind::gmm ? 0 : 1});
    ck.put_tensor("oracle/bounds", Tensor({2}, {lo, hi}));
    if (kind == ScorerKind::gmm) {
        gmm.save(ck, "oracle/gmm/");
    } else {
        Tensor flat({static_cast<int64_t>(centers.size()), centers.front().numel()});
        for (size_t i = 0; i < centers.size(); ++i)
            for (int64_t j = 0; j < centers[i].numel(); ++j)
                flat.at2(static_cast<int64_t>(i), j) = centers[i].at(j);
        ck.put_tensor("oracle/centers", flat);
    }
}

QualityOracle QualityOracle::load(const Checkpoint& ck) {
    QualityOracle o;
    o.kind = ck.i32("oracle/kind").at(0) == 0 ? ScorerKind::gmm : ScorerKind::center;
    const Tensor bounds = ck.tensor("oracle/bounds");
    o.lo = bounds.at(0);
    o.hi = bounds.at(1);
    if (o.kind == ScorerKind::gmm) {
        o.gmm = GmmModel::load(ck, "oracle/gmm/");
    } else {
        const Tensor flat = ck.tensor("oracle/centers");
        for (int64_t i = 0; i < flat.shape[0]; ++i) {
            Tensor c({flat.shape[1]});
            for (int64_t j = 0; j < flat.shape[1]; ++j) c.at(j) = flat.at2(i, j);
            o.centers.push_back(std::move(c));
        }
    }
    return o;
}

void export_dataset_csv(const std::string& path, const SynthWorld& world,
                        const std::vector<SynthSample>& samples, const QualityOracle* oracle) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out << "tokens,level";
    for (int j = 0; j < world.cfg.data_dim; ++j) out << ",x" << j;
    out << ",q\n";
    char buf[64];
    for (const auto& s : samples) {
        for (size_t i = 0; i < s.prompt.tokens.size(); ++i)
            out << (i ? " " : "") << world.vocab.name(s.prompt.tokens[i]);
        out << ',' << s.prompt.detail_level;
        for (int j = 0; j < world.cfg.data_dim; ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", s.x0.at(j));
            out << ',' << buf;
        }
        out << ',';
        if (oracle) {
            std::snprintf(buf, sizeof buf, "%.17g", oracle->score(s.x0));
            out << buf;
        }
        out << '\n';
    }
    if (!out) throw std::runtime_error("failed while writing '" + path + "'");
}

}  // namespace qlip
