#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "qlip/checkpoint.hpp"
#include "qlip/config.hpp"
#include "qlip/diffusion.hpp"
#include "qlip/pipeline.hpp"
#include "qlip/rng.hpp"
#include "qlip/synth.hpp"

using namespace qlip;

// Diagnostic: per-step MSE between the full-precision epsilon prediction and
// uniform-bit quantized predictions, over calibration-style draws.
int main(int argc, char** argv) {
    RunConfig cfg;
    for (int i = 1; i + 1 < argc; i += 2) {
        std::string key = argv[i];
        if (key.rfind("--", 0) == 0) key = key.substr(2);
        apply_override(cfg, key, argv[i + 1]);
    }
    finalize_config(cfg);
    Pipeline pipe(cfg);
    pipe.calibrate();

    const std::string pre_dir = pipe.stage_dir("pretrain");
    const std::string calib_dir = pipe.stage_dir("calibrate");
    const Checkpoint mc = Checkpoint::load(pre_dir + "/model.ckpt");
    const Denoiser model = Denoiser::load(mc);
    const DiffusionSchedule sched = DiffusionSchedule::load(mc);
    const SynthWorld world = SynthWorld::load(Checkpoint::load(pre_dir + "/world.ckpt"));
    const RangeTable ranges = RangeTable::load(Checkpoint::load(calib_dir + "/ranges.ckpt"));

    const uint64_t seed = static_cast<uint64_t>(cfg.seed);
    const auto data = generate_dataset(world, 256, derive_seed(seed, "dataset.reference"));
    const QuantWeights qw = QuantWeights::build(model, cfg.weight_bits);

    const int bits_list[] = {2, 3, 4};
    const int T = cfg.steps;
    const int draws = 8;
    RngStream rng(seed, "probe");

    std::printf("t,amp,mse%d,mse%d,mse%d\n", bits_list[0], bits_list[1], bits_list[2]);
    std::vector<double> tot(3, 0.0);
    for (int t = 1; t <= T; ++t) {
        double mse[3] = {0, 0, 0};
        const double ab = sched.alpha_bar_at(t);
        for (int d = 0; d < draws; ++d) {
            const auto& s = data[static_cast<size_t>((t * 131 + d * 17) % 256)];
            Tensor eps = Tensor::zeros({model.cfg.data_dim});
            for (int64_t j = 0; j < eps.numel(); ++j) eps.at(j) = rng.normal();
            const Tensor xt = forward_noise(s.x0, t, eps, sched);
            const Tensor ef = denoise_forward(model, xt, t, s.prompt.z);
            for (int bi = 0; bi < 3; ++bi) {
                std::vector<int> bits(static_cast<size_t>(model.cfg.quant_layers), bits_list[bi]);
                QuantArgs qa{&qw, &ranges, (t - 1) / cfg.group_size, bits.data()};
                const Tensor eq = denoise_forward(model, xt, t, s.prompt.z, &qa);
                double acc = 0;
                for (int64_t j = 0; j < ef.numel(); ++j) {
                    const double r = ef.at(j) - eq.at(j);
                    acc += r * r;
                }
                mse[bi] += acc / static_cast<double>(ef.numel());
            }
        }
        for (int bi = 0; bi < 3; ++bi) {
            mse[bi] /= draws;
            tot[static_cast<size_t>(bi)] += mse[bi];
        }
        std::printf("%d,%.3g,%.4g,%.4g,%.4g\n", t, 1.0 / std::sqrt(1.0 - ab), mse[0], mse[1],
                    mse[2]);
    }
    std::printf("MEAN,,%.5g,%.5g,%.5g\n", tot[0] / T, tot[1] / T, tot[2] / T);
    return 0;
}
