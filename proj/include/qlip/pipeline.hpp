#pragma once

#include <string>

#include "qlip/config.hpp"

namespace qlip {

struct StageResult {
    std::string dir;
    bool cached = false;
};

// Stage runner with content-addressed caching: every stage writes into
// <cache root>/<stage>-<scope hash>, so artifacts from different
// configurations can never be mixed up. A completed manifest marks a cache
// hit; `force` recomputes the requested stage (never its prerequisites).
//
// The denoiser pretraining is an internal stage that runs on demand; the
// public stages match the CLI subcommands, and each demands its public
// prerequisites instead of running them implicitly.
class Pipeline {
public:
    Pipeline(RunConfig cfg, bool force = false);

    StageResult calibrate();
    StageResult train_t2q();
    StageResult train_q2b();
    StageResult sample();
    StageResult evaluate();

    // Consumes the evaluate artifacts. Empty out_dir writes alongside them.
    std::string report(const std::string& out_dir = "");

    // Full pipeline per axis value with shared seeds; returns the sweep dir.
    // Axes: lambda_bit, group_size (alias M), variant, menu, quality_metric.
    std::string ablate(const std::string& axis);

    const RunConfig& config() const { return cfg_; }
    std::string stage_dir(const std::string& stage) const;

private:
    StageResult pretrain();

    RunConfig cfg_;
    bool force_;
    std::string root_;
};

}  // namespace qlip
