#include <cmath>
#include <vector>

#include "doctest.h"
#include "qlip/errors.hpp"
#include "qlip/metrics.hpp"
#include "qlip/rng.hpp"

using namespace qlip;

TEST_CASE("rank correlation matches the hand-computed pair") {
    const std::vector<double> pred = {1.0, 2.0, 3.0};
    const std::vector<double> truth = {2.0, 4.0, 9.0};
    const auto [srocc, plcc] = rank_correlation(pred, truth);
    CHECK(srocc == doctest::Approx(1.0).epsilon(1e-15));
    // covariance 7/3 over sqrt(2/3 * 26/3) per point: 21 / sqrt(468)
    CHECK(plcc == doctest::Approx(21.0 / std::sqrt(468.0)).epsilon(1e-15));
    CHECK(plcc == doctest::Approx(0.9707253433941508).epsilon(1e-15));
}

TEST_CASE("spearman uses average ranks for ties") {
    const std::vector<double> pred = {1.0, 2.0, 2.0, 3.0};
    const std::vector<double> truth = {1.0, 2.0, 3.0, 4.0};
    const auto [srocc, plcc] = rank_correlation(pred, truth);
    // tied middle pair shares rank 2.5: pearson((1,2.5,2.5,4),(1,2,3,4)) = sqrt(0.9)
    CHECK(srocc == doctest::Approx(std::sqrt(0.9)).epsilon(1e-12));
    CHECK(plcc > 0.9);

    // order of arguments matters only by symmetry
    const auto [s2, p2] = rank_correlation(truth, pred);
    CHECK(s2 == doctest::Approx(srocc).epsilon(1e-15));
    CHECK(p2 == doctest::Approx(plcc).epsilon(1e-15));
}

TEST_CASE("rank correlation rejects degenerate inputs") {
    CHECK_THROWS_AS((void)rank_correlation({1.0, 2.0}, {1.0, 2.0}), std::invalid_argument);
    CHECK_THROWS_AS((void)rank_correlation({1.0, 2.0, 3.0}, {1.0, 2.0}), std::invalid_argument);
    CHECK_THROWS_AS((void)rank_correlation({1.0, 1.0, 1.0}, {1.0, 2.0, 3.0}), NumericError);
    CHECK_THROWS_AS((void)rank_correlation({1.0, 2.0, 3.0}, {5.0, 5.0, 5.0}), NumericError);
}

TEST_CASE("average bits: flat plans and mixtures") {
    const BitPlan all6(3, 10, 6);
    const BitPlan all10(3, 10, 10);
    CHECK(compute_fab({all6}) == 6.0);
    CHECK(compute_fab({all6, all10}) == 8.0);

    BitPlan mixed(2, 2, 6);
    mixed.at(0, 1) = 10;  // (10 + 6 + 6 + 6) / 4 = 7
    CHECK(compute_fab({mixed}) == 7.0);

    CHECK_THROWS_AS((void)compute_fab({}), std::invalid_argument);
    CHECK_THROWS_AS((void)compute_fab({all6, BitPlan(3, 9, 6)}), std::invalid_argument);
}

TEST_CASE("bit operations follow the width scaling law") {
    CostModel cost;
    cost.quant_macs = {1e9};
    cost.unquant_macs = 0.0;
    cost.weight_bits = 4;
    const BitPlan plan(1, 1, 16);
    CHECK(compute_bitops(cost, plan) == doctest::Approx(6.25e7).epsilon(1e-15));

    // full precision everywhere reproduces the raw MAC count
    cost.weight_bits = 32;
    cost.unquant_macs = 5e8;
    const BitPlan full(1, 2, 32);
    CHECK(compute_bitops(cost, full) == doctest::Approx(2.0 * (1e9 + 5e8)).epsilon(1e-15));

    const BitPlan wrong(2, 1, 16);
    CHECK_THROWS_AS((void)compute_bitops(cost, wrong), std::invalid_argument);
}

TEST_CASE("the denoiser cost model counts its matmuls") {
    DenoiserConfig cfg;  // 8 data + 16 time + 64 cond, width 64, 6 hooked layers
    const CostModel cost = CostModel::for_denoiser(cfg, 8);
    CHECK(cost.weight_bits == 8);
    REQUIRE(cost.quant_macs.size() == 6);
    for (double m : cost.quant_macs) CHECK(m == 64.0 * 64.0);
    CHECK(cost.unquant_macs == 88.0 * 64.0 + 64.0 * 8.0);
}

TEST_CASE("bandwidth heuristic is the median pairwise distance") {
    // three collinear points: distances 1, 1, 2 -> median 1
    std::vector<Tensor> pts = {Tensor({1}, {0.0}), Tensor({1}, {1.0}), Tensor({1}, {2.0})};
    CHECK(median_heuristic_bandwidth(pts) == doctest::Approx(1.0).epsilon(1e-15));

    // four points: distances 1, 2, 3, 1, 2, 1 -> sorted 1,1,1,2,2,3 -> median 1.5
    pts.push_back(Tensor({1}, {3.0}));
    CHECK(median_heuristic_bandwidth(pts) == doctest::Approx(1.5).epsilon(1e-15));

    const std::vector<Tensor> same = {Tensor({1}, {2.0}), Tensor({1}, {2.0}),
                                      Tensor({1}, {2.0})};
    CHECK_THROWS_AS((void)median_heuristic_bandwidth(same), NumericError);
    CHECK_THROWS_AS((void)median_heuristic_bandwidth({Tensor({1}, {0.0})}),
                    std::invalid_argument);
}

TEST_CASE("identical sample sets have zero discrepancy") {
    RngStream rng(3, "mmd.self");
    std::vector<Tensor> x;
    for (int i = 0; i < 40; ++i) {
        Tensor t({4});
        for (auto& v : t.data) v = rng.normal();
        x.push_back(t);
    }
    CHECK(mmd_distance(x, x) == 0.0);  // unbiased estimate goes negative, floor holds it
    CHECK(mmd_distance(x, x, 1.0) == 0.0);
}

TEST_CASE("separated clusters register a large discrepancy, matched draws a small one") {
    RngStream rng(5, "mmd.sep");
    std::vector<Tensor> x, y, z;
    for (int i = 0; i < 200; ++i) {
        Tensor a({8}), b({8}), c({8});
        for (auto& v : a.data) v = rng.normal();
        for (auto& v : b.data) v = 4.0 + rng.normal();
        for (auto& v : c.data) v = rng.normal();
        x.push_back(a);
        y.push_back(b);
        z.push_back(c);
    }
    CHECK(mmd_distance(x, y) > 0.5);
    CHECK(mmd_distance(x, z) < 0.05);  // same distribution, independent draws
    CHECK(mmd_distance(x, y) > mmd_distance(x, z));
}

TEST_CASE("discrepancy is insensitive to sample order") {
    RngStream rng(7, "mmd.perm");
    std::vector<Tensor> x, y;
    for (int i = 0; i < 30; ++i) {
        Tensor a({3}), b({3});
        for (auto& v : a.data) v = rng.normal();
        for (auto& v : b.data) v = 0.5 + rng.normal();
        x.push_back(a);
        y.push_back(b);
    }
    const double base = mmd_distance(x, y, 1.3);
    std::vector<Tensor> shuffled(x.rbegin(), x.rend());
    CHECK(std::abs(mmd_distance(shuffled, y, 1.3) - base) < 1e-9);

    CHECK_THROWS_AS((void)mmd_distance({x[0]}, y, 1.0), std::invalid_argument);
}
