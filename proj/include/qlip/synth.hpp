#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qlip/checkpoint.hpp"
#include "qlip/gmm.hpp"
#include "qlip/tensor.hpp"

namespace qlip {

// Geometry of the synthetic prompt-conditioned data distribution. Each class
// owns a block of modifier tokens; a prompt of detail level L uses the class
// token plus the first L modifiers of its block, so the conditional
// distribution of x0 depends on (class, level) alone.
struct SynthConfig {
    int classes = 8;
    int modifiers = 56;  // must divide evenly across classes
    int embed_dim = 64;
    int data_dim = 8;
    double center_scale = 2.0;     // spread of class centers
    double modifier_scale = 0.25;  // size of each modifier's deterministic shift
    double noise_base = 1.0;       // residual sigma at detail level 0
    double noise_shrink = 0.5;     // sigma multiplier per added modifier
    int max_level = 3;

    int vocab_size() const { return classes + modifiers; }
    int modifiers_per_class() const { return modifiers / classes; }
    void validate() const;
};

// Token-name <-> id table: ids [0, classes) are "class_<c>", the rest are
// "mod_<j>" with class c owning the contiguous block starting at c blocks in.
class Vocabulary {
public:
    Vocabulary() = default;
    explicit Vocabulary(const SynthConfig& cfg);

    int size() const { return static_cast<int>(names_.size()); }
    const std::string& name(int id) const;
    int id(const std::string& name) const;  // unknown token -> error

private:
    std::vector<std::string> names_;
};

struct PromptSample {
    std::vector<int> tokens;  // class token first, then modifiers
    int class_id = 0;
    int detail_level = 0;
    Tensor z;  // [embed_dim], mean of token embedding rows
};

struct SynthSample {
    PromptSample prompt;
    Tensor x0;  // [data_dim]
};

// Frozen world: embeddings, class centers, modifier offsets. Built
// deterministically from (config, seed); serializable so later stages reuse
// the exact tables.
struct SynthWorld {
    SynthConfig cfg;
    Vocabulary vocab;
    Tensor embedding;  // [vocab_size, embed_dim]
    Tensor centers;    // [classes, data_dim]
    Tensor offsets;    // [modifiers, data_dim]

    static SynthWorld build(const SynthConfig& cfg, uint64_t seed);

    // x0 mean for the canonical prompt of (class, level): center + partial
    // offset sum. Closed form, used by tests and the center-distance scorer.
    Tensor conditional_mean(int class_id, int level) const;
    double residual_sigma(int level) const;

    PromptSample canonical_prompt(int class_id, int level) const;
    Tensor encode_prompt(const std::vector<int>& tokens) const;
    Tensor encode_prompt(const std::vector<std::string>& tokens) const;

    void save(Checkpoint& ck) const;
    static SynthWorld load(const Checkpoint& ck);
};

// Levels and classes are assigned round-robin so both are exactly uniform;
// only the residual noise draws on the seed (one stream per sample).
std::vector<SynthSample> generate_dataset(const SynthWorld& world, int n, uint64_t seed);

enum class ScorerKind { gmm, center };

ScorerKind parse_scorer_kind(const std::string& s);
std::string scorer_kind_name(ScorerKind k);

// Quality oracle: a raw fitness value (GMM log-likelihood of x, or negative
// distance to the nearest conditional mean) mapped to [0,1] by an affine
// stretch between the 1st and 99th percentile of the reference values.
struct QualityOracle {
    ScorerKind kind = ScorerKind::gmm;
    GmmModel gmm;                 // kind == gmm
    std::vector<Tensor> centers;  // kind == center: all (class, level) means
    double lo = 0.0;
    double hi = 1.0;

    double raw(const Tensor& x) const;
    double score(const Tensor& x) const;  // clamp((raw - lo)/(hi - lo), 0, 1)

    static QualityOracle fit(ScorerKind kind, const SynthWorld& world,
                             const std::vector<Tensor>& reference, int n_components,
                             uint64_t seed);

    void save(Checkpoint& ck) const;
    static QualityOracle load(const Checkpoint& ck);
};

// One row per sample: tokens, level, x0 components, and the oracle score
// (blank when no oracle is supplied).
void export_dataset_csv(const std::string& path, const SynthWorld& world,
                        const std::vector<SynthSample>& samples, const QualityOracle* oracle);

}  // namespace qlip
