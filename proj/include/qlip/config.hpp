#pragma once

#include <string>
#include <utility>
#include <vector>

#include "qlip/diffusion.hpp"
#include "qlip/q2b.hpp"
#include "qlip/synth.hpp"
#include "qlip/t2q.hpp"

namespace qlip {

// Every tunable of the pipeline, one field per config key. Sentinels: a
// group_size of 0 derives steps/5, a forced_high of -1 derives steps/10, an
// empty cache_dir falls back to QLIP_CACHE_DIR and then ./qlip-cache.
struct RunConfig {
    // [run]
    int seed = 1;
    // [schedule]
    int steps = 100;
    double beta_start = 1e-3;
    double beta_end = 0.2;
    // [model]
    int data_dim = 8;
    int width = 64;
    int quant_layers = 6;
    int time_dim = 16;
    // [menu]
    int menu_low = 6;
    int menu_med = 8;
    int menu_high = 10;
    int weight_bits = 8;
    // [synth]
    int classes = 8;
    int modifiers = 56;
    int embed_dim = 64;
    int max_level = 3;
    double center_scale = 12.0;
    double modifier_scale = 0.5;
    double noise_base = 1.0;
    double noise_shrink = 0.75;
    // [calibrate]
    int reference = 4000;
    int prompts = 64;
    int oracle_components = 8;
    std::string quality_metric = "gmm";
    // [pretrain]
    int pretrain_iterations = 60000;
    int pretrain_batch = 16;
    double pretrain_lr = 1e-3;
    // [t2q]
    int t2q_hidden = 512;
    int t2q_epochs = 3;
    int t2q_batch = 32;
    int t2q_labels = 2000;
    double t2q_lr = 1e-3;
    double t2q_holdout = 0.2;
    // [q2b]
    double lambda_bit = 1.0;
    double q2b_lr = 1e-3;
    int group_size = 0;    // 0: derive steps/5
    int forced_high = -1;  // -1: derive steps/10
    std::string variant = "full";
    int q2b_iterations = 5000;
    // [sample]
    int sample_count = 500;
    int sample_batch = 1;
    int uniform_bits = 8;
    std::string sample_mode = "qlip";
    // [paths] — excluded from all hashes
    std::string cache_dir;
    // [ablate] — comma-separated sweep values
    std::string ablate_lambda_bit = "0.1,1,10";
    std::string ablate_group_size = "10,20,50";
    std::string ablate_variant = "full,q_only,q_plus_h,q_plus_m";
    std::string ablate_menu = "6:8:10:8,4:6:8:8";
    std::string ablate_quality_metric = "gmm,center";
};

// Structured-text config file: [section] headers, key = value lines, #
// comments. Unknown sections or keys are rejected.
RunConfig parse_config_file(const std::string& path);

// One "--section.key value" override; dashes in the key normalize to
// underscores. Unknown keys or unparsable values are rejected.
void apply_override(RunConfig& cfg, const std::string& key, const std::string& value);

// Resolves sentinels and validates every field.
void finalize_config(RunConfig& cfg);

// Canonical "section.key" -> value listing (post-sentinel), sorted by key.
std::vector<std::pair<std::string, std::string>> config_items(const RunConfig& cfg);

// 16-hex-digit content hash over every non-path key.
std::string config_hash(const RunConfig& cfg);

// Hash over the keys a stage's artifacts actually depend on. Stages:
// pretrain, calibrate, t2q, q2b, sample, evaluate.
std::string stage_scope_hash(const RunConfig& cfg, const std::string& stage);

// Assembled sub-configurations -----------------------------------------------

DiffusionSchedule schedule_of(const RunConfig& cfg);
DenoiserConfig denoiser_of(const RunConfig& cfg);
SynthConfig synth_of(const RunConfig& cfg);
BitMenu menu_of(const RunConfig& cfg);
Q2BSettings q2b_of(const RunConfig& cfg);
T2QTrainConfig t2q_train_of(const RunConfig& cfg);
PretrainConfig pretrain_of(const RunConfig& cfg);
Q2BTrainConfig q2b_train_of(const RunConfig& cfg);

// cache_dir, falling back to QLIP_CACHE_DIR and then ./qlip-cache
std::string cache_root(const RunConfig& cfg);

}  // namespace qlip
