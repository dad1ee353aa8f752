#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "docclean/inference.hpp"
#include "oracle.hpp"
#include "test_support.hpp"

using namespace docclean;
using docclean::testing::random_params;
using docclean::testing::uniform_background;
using docclean::testing::uniform_grid;

namespace {

struct TinyInstance {
    ModelParams params;
    BackgroundDensity bg;
    FeatureGrid patch;
};

TinyInstance tiny_instance(std::uint64_t seed, GridShape D = {4, 4}, GridShape P = {2, 2}, std::size_t C = 2,
                           std::size_t F = 1) {
    std::mt19937_64 rng(seed);
    auto bg = uniform_background(D, F, rng);
    auto params = random_params(C, D, P, F, rng);
    // Half the instances hold a sampled pattern, half are pure noise.
    FeatureGrid patch = seed % 2 ? sample_patch(params, bg, seed).first : uniform_grid(D, F, rng);
    return {std::move(params), std::move(bg), std::move(patch)};
}

std::size_t flat(const ModelParams& p, std::size_t c, Position x) {
    return c * p.positions() + x.row * p.patch_dims.cols + x.col;
}

}  // namespace

TEST(MaskPosterior, ZeroPriorForcesZero) {
    auto inst = tiny_instance(3);
    for (std::size_t i = 0; i < inst.params.pattern_cells(); ++i) inst.params.mask(1, i) = 0.0;
    const auto post = mask_posterior(inst.params, inst.bg, inst.patch, 1, {1, 2});
    for (double p : post) EXPECT_EQ(p, 0.0);
}

TEST(MaskPosterior, EqualLikelihoodsGiveOneHalf) {
    // One cell, F = 1: choose the variance so that N(y; y, var) equals H_B(y).
    std::mt19937_64 rng(5);
    auto bg = uniform_background({1, 1}, 1, rng);
    FeatureGrid patch({1, 1}, 1);
    patch.values[0] = 0.37;
    const double h = oracle::bg_density(bg.dimension(0), 0.37);
    ModelParams m(1, {1, 1}, {1, 1}, 1);
    m.means[0] = 0.37;
    m.variances[0] = 1.0 / (2.0 * std::numbers::pi * h * h);
    m.masks[0] = 0.5;
    const auto ll = cell_log_likes(m, bg, patch, 0, {0, 0});
    EXPECT_NEAR(ll[0].first, ll[0].second, 1e-12);
    EXPECT_NEAR(mask_posterior(m, bg, patch, 0, {0, 0})[0], 0.5, 1e-12);
}

TEST(MaskPosterior, MatchesTwoCaseRatio) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto inst = tiny_instance(seed, {5, 6}, {3, 3}, 2, 2);
        const Position x{4, 5};
        const auto post = mask_posterior(inst.params, inst.bg, inst.patch, 1, x);
        for (std::size_t i = 0; i < 9; ++i) {
            const std::size_t dr = (i / 3 + x.row) % 5, dc = (i % 3 + x.col) % 6;
            const double a = inst.params.mask(1, i);
            const double fg = a * oracle::gauss_product(inst.params, 1, i, inst.patch, dr, dc);
            const double bgv = (1 - a) * oracle::bg_product(inst.bg, inst.patch, dr, dc);
            EXPECT_NEAR(post[i], fg / (fg + bgv), 1e-12);
        }
    }
}

TEST(CellLogLikes, GaussianAtItsMean) {
    auto inst = tiny_instance(8, {3, 3}, {3, 3}, 1, 2);
    for (std::size_t i = 0; i < 9; ++i)
        for (std::size_t f = 0; f < 2; ++f) inst.patch.at(i / 3, i % 3, f) = inst.params.mean(0, i)[f];
    const auto ll = cell_log_likes(inst.params, inst.bg, inst.patch, 0, {0, 0});
    for (std::size_t i = 0; i < 9; ++i) {
        double expect = 0.0;
        for (std::size_t f = 0; f < 2; ++f) expect -= 0.5 * std::log(2 * std::numbers::pi * inst.params.variance(0, i)[f]);
        EXPECT_NEAR(ll[i].first, expect, 1e-12);
    }
}

TEST(CellLogLikes, MatchesScalarReferenceAndWrapsCyclically) {
    const auto inst = tiny_instance(11, {5, 5}, {3, 3}, 2, 2);
    const Position x{3, 4};
    const auto ll = cell_log_likes(inst.params, inst.bg, inst.patch, 1, x);
    for (std::size_t i = 0; i < 9; ++i) {
        const std::size_t dr = (i / 3 + 3) % 5, dc = (i % 3 + 4) % 5;
        EXPECT_NEAR(ll[i].first, std::log(oracle::gauss_product(inst.params, 1, i, inst.patch, dr, dc)), 1e-12);
        EXPECT_NEAR(ll[i].second, std::log(oracle::bg_product(inst.bg, inst.patch, dr, dc)), 1e-12);
    }
    const auto origin = cell_log_likes(inst.params, inst.bg, inst.patch, 0, {0, 0});
    const auto wrapped = cell_log_likes(inst.params, inst.bg, inst.patch, 0, {5, 5});
    EXPECT_EQ(origin, wrapped);
}

TEST(JointLogScore, SingleCellClosedForm) {
    std::mt19937_64 rng(2);
    auto bg = uniform_background({1, 1}, 1, rng);
    ModelParams m(1, {1, 1}, {1, 1}, 1);
    m.means[0] = 0.4;
    m.variances[0] = 0.02;
    m.masks[0] = 0.3;
    FeatureGrid patch({1, 1}, 1);
    patch.values[0] = 0.45;
    const double n = std::exp(-0.05 * 0.05 / (2 * 0.02)) / std::sqrt(2 * std::numbers::pi * 0.02);
    const double h = oracle::bg_density(bg.dimension(0), 0.45);
    EXPECT_NEAR(joint_log_score(m, bg, patch, 0, {0, 0}), std::log(0.3 * n + 0.7 * h), 1e-12);
}

TEST(JointLogScore, FactorizedPosteriorMatchesEnumeration) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto inst = tiny_instance(seed);
        const auto exact = oracle::enumerate(inst.params, inst.bg, inst.patch);
        const auto post = truncated_posterior(inst.params, inst.bg, inst.patch, full_joint_space(inst.params));
        for (std::size_t k = 0; k < post.states.size(); ++k) {
            const auto idx = flat(inst.params, post.states[k].class_index, post.states[k].position);
            EXPECT_NEAR(post.q[k], exact.joint_cx[idx], 1e-10);
            EXPECT_NEAR(post.log_joint[k], exact.log_joint_cx[idx], 1e-9 * std::abs(exact.log_joint_cx[idx]));
            for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(post.mask_post[k * 4 + i], exact.mask_cx[idx * 4 + i], 1e-10);
        }
        EXPECT_NEAR(post.log_evidence_trunc, exact.log_evidence, 1e-10 * std::abs(exact.log_evidence));
    }
}

TEST(JointLogScore, CyclicShiftOfContentShiftsArgmax) {
    std::mt19937_64 rng(21);
    const GridShape D{6, 7};
    auto bg = uniform_background(D, 2, rng);
    auto params = random_params(2, D, {3, 3}, 2, rng);
    for (double& v : params.variances) v = 0.002;
    for (double& a : params.masks) a = 0.9;
    std::mt19937_64 srng(4);
    const auto patch = sample_patch_at(params, bg, 1, {1, 2}, srng).first;
    const Position delta{2, 3};
    FeatureGrid shifted(D, 2);
    for (std::size_t r = 0; r < D.rows; ++r)
        for (std::size_t c = 0; c < D.cols; ++c)
            for (std::size_t f = 0; f < 2; ++f) shifted.at((r + delta.row) % D.rows, (c + delta.col) % D.cols, f) = patch.at(r, c, f);
    auto argmax = [&](const FeatureGrid& g) {
        const auto post = truncated_posterior(params, bg, g, full_joint_space(params));
        const auto k = std::max_element(post.q.begin(), post.q.end()) - post.q.begin();
        return post.states[static_cast<std::size_t>(k)];
    };
    const auto a = argmax(patch), b = argmax(shifted);
    EXPECT_EQ(a.class_index, b.class_index);
    EXPECT_EQ(b.position.row, (a.position.row + delta.row) % D.rows);
    EXPECT_EQ(b.position.col, (a.position.col + delta.col) % D.cols);
}

TEST(SelectionScores, FullLambdaEqualsJointScore) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto inst = tiny_instance(seed, {6, 5}, {3, 4}, 3, 2);
        const auto scores = selection_scores(inst.params, inst.bg, inst.patch, SelectionConfig::exact(inst.params));
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t r = 0; r < 6; ++r)
                for (std::size_t q = 0; q < 5; ++q) {
                    const double j = joint_log_score(inst.params, inst.bg, inst.patch, c, {r, q});
                    EXPECT_NEAR(scores[flat(inst.params, c, {r, q})], j, 1e-11 * std::abs(j));
                }
    }
}

TEST(SelectionScores, SingleReliableCellMatchesScalarLoop) {
    const auto inst = tiny_instance(17, {5, 5}, {3, 3}, 2, 1);
    const auto scores = selection_scores(inst.params, inst.bg, inst.patch, {1, 0.5});
    double total_bg = 0.0;
    for (std::size_t r = 0; r < 5; ++r)
        for (std::size_t c = 0; c < 5; ++c) total_bg += std::log(oracle::bg_product(inst.bg, inst.patch, r, c));
    for (std::size_t c = 0; c < 2; ++c) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < 9; ++i)
            if (inst.params.mask(c, i) > inst.params.mask(c, best)) best = i;
        const double a = inst.params.mask(c, best);
        for (std::size_t xr = 0; xr < 5; ++xr)
            for (std::size_t xc = 0; xc < 5; ++xc) {
                const std::size_t dr = (best / 3 + xr) % 5, dc = (best % 3 + xc) % 5;
                const double fg = oracle::gauss_product(inst.params, c, best, inst.patch, dr, dc);
                const double h = oracle::bg_product(inst.bg, inst.patch, dr, dc);
                const double expect = std::log(inst.params.pi[c] / 25.0) + total_bg - std::log(h) + std::log(a * fg + (1 - a) * h);
                EXPECT_NEAR(scores[flat(inst.params, c, {xr, xc})], expect, 1e-10);
            }
    }
}

TEST(SelectionScores, UniformMasksTieBreakRowMajor) {
    ModelParams m(1, {4, 4}, {3, 3}, 1);
    const auto cells = reliable_cells(m, 0, 4);
    EXPECT_EQ(cells, (std::vector<std::size_t>{0, 1, 2, 3}));
    m.mask(0, 7) = 0.9;
    EXPECT_EQ(reliable_cells(m, 0, 2), (std::vector<std::size_t>{7, 0}));
}

TEST(BuildCandidates, CapacityAndTieBreak) {
    std::vector<double> scores(2 * 6, 1.0);
    const auto all = build_candidates(scores, {1, 1.0}, 6, 3);
    ASSERT_EQ(all.entries.size(), 12u);
    EXPECT_EQ(all.entries.front(), (JointState{0, {0, 0}}));
    EXPECT_EQ(all.entries.back(), (JointState{1, {1, 2}}));
    const auto few = build_candidates(scores, {1, 0.3}, 6, 3);  // ⌈3.6⌉ = 4
    ASSERT_EQ(few.entries.size(), 4u);
    EXPECT_EQ(few.entries[3], (JointState{0, {1, 0}}));
    EXPECT_EQ(candidate_capacity(0.02, 6 * 40 * 55), 264u);
    EXPECT_THROW(build_candidates(scores, {1, 0.05}, 6, 3), std::invalid_argument);
}

TEST(BuildCandidates, PicksTopScoresAndNestsInK) {
    std::mt19937_64 rng(9);
    std::uniform_int_distribution<int> u(0, 20);  // coarse values force ties
    std::vector<double> scores(3 * 20);
    for (double& s : scores) s = u(rng);
    CandidateSet prev;
    for (double K : {0.05, 0.1, 0.25, 0.5, 1.0}) {
        const auto set = build_candidates(scores, {1, K}, 20, 5);
        EXPECT_EQ(set.entries.size(), candidate_capacity(K, 60));
        const double worst = scores[set.entries.back().class_index * 20 + set.entries.back().position.row * 5 +
                                    set.entries.back().position.col];
        std::size_t better_outside = 0;
        for (std::size_t s = 0; s < 60; ++s) {
            const JointState st{s / 20, {(s % 20) / 5, s % 5}};
            const bool in = std::find(set.entries.begin(), set.entries.end(), st) != set.entries.end();
            if (!in && scores[s] > worst) ++better_outside;
        }
        EXPECT_EQ(better_outside, 0u);
        for (const auto& e : prev.entries)
            EXPECT_NE(std::find(set.entries.begin(), set.entries.end(), e), set.entries.end());
        prev = set;
    }
}

TEST(TruncatedPosterior, SingleCandidateHasAllMass) {
    const auto inst = tiny_instance(1);
    CandidateSet one;
    one.entries.push_back({1, {2, 3}});
    one.capacity = 1;
    const auto post = truncated_posterior(inst.params, inst.bg, inst.patch, one);
    EXPECT_EQ(post.q, std::vector<double>{1.0});
    for (double m : post.mask_post) {
        EXPECT_GE(m, 0.0);
        EXPECT_LE(m, 1.0);
    }
}

TEST(TruncatedPosterior, ExactModeMatchesEnumerationThroughInferPatch) {
    for (std::uint64_t seed = 20; seed < 26; ++seed) {
        const auto inst = tiny_instance(seed);
        const auto exact = oracle::enumerate(inst.params, inst.bg, inst.patch);
        EvalCounters counters;
        const auto post = infer_patch(inst.params, inst.bg, inst.patch, SelectionConfig::exact(inst.params), &counters);
        EXPECT_EQ(counters.joint_states, 32u);
        EXPECT_EQ(counters.selection_states, 0u);
        double total = 0.0;
        for (std::size_t k = 0; k < post.states.size(); ++k) {
            total += post.q[k];
            EXPECT_NEAR(post.q[k], exact.joint_cx[flat(inst.params, post.states[k].class_index, post.states[k].position)], 1e-10);
        }
        EXPECT_NEAR(total, 1.0, 1e-9);
    }
}

TEST(TruncatedPosterior, CountersReflectTruncation) {
    const auto inst = tiny_instance(4, {6, 6}, {3, 3}, 3, 1);
    EvalCounters counters;
    infer_patch(inst.params, inst.bg, inst.patch, {4, 0.1}, &counters);
    EXPECT_EQ(counters.selection_states, 3u * 36u);
    EXPECT_EQ(counters.joint_states, candidate_capacity(0.1, 108));
}

TEST(FreeEnergy, ExactEqualsLogLikelihoodAndBoundsTruncated) {
    std::vector<FeatureGrid> data;
    std::mt19937_64 rng(77);
    auto bg = uniform_background({4, 4}, 1, rng);
    auto params = random_params(2, {4, 4}, {2, 2}, 1, rng);
    double exact_ll = 0.0;
    for (std::uint64_t n = 0; n < 6; ++n) {
        data.push_back(sample_patch(params, bg, n).first);
        exact_ll += oracle::enumerate(params, bg, data.back()).log_evidence;
    }
    const double fe = free_energy(data, params, bg, SelectionConfig::exact(params));
    EXPECT_NEAR(fe, exact_ll, 1e-10 * std::abs(exact_ll));
    for (double K : {0.05, 0.2, 0.5}) EXPECT_LE(free_energy(data, params, bg, {2, K}), fe + 1e-12);
}
