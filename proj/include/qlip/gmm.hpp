#pragma once

#include <cstdint>
#include <vector>

#include "qlip/checkpoint.hpp"
#include "qlip/tensor.hpp"

namespace qlip {

// Diagonal-covariance Gaussian mixture fitted by EM. Initialization draws
// component means from the data with a seeded stream; a collapsing component
// (vanishing weight or variance) triggers a jittered re-initialization, at
// most three times, before the fit gives up.
struct GmmModel {
    int components = 0;
    int dim = 0;
    std::vector<double> weight;   // [components]
    std::vector<double> mean;     // [components * dim]
    std::vector<double> var;      // [components * dim]

    double log_density(const Tensor& x) const;

    static GmmModel fit(const std::vector<Tensor>& data, int components, uint64_t seed,
                        int max_iters = 200);

    void save(Checkpoint& ck, const std::string& prefix) const;
    static GmmModel load(const Checkpoint& ck, const std::string& prefix);
};

}  // namespace qlip
