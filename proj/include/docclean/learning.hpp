#pragma once

// Truncated variational EM: initialization, E-step over a dataset, closed-form
// M-step, convergence, character-vs-dirt class discrimination and restarts.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <mutex>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "docclean/background.hpp"
#include "docclean/common.hpp"
#include "docclean/features.hpp"
#include "docclean/inference.hpp"
#include "docclean/model.hpp"

namespace docclean {

enum class InitMode {
    uniform_cube,    // means uniform over the observed feature range (color data)
    patch_segments,  // means cut from random patches at random offsets (documents)
};

inline constexpr double kDeadClassFraction = 1e-6;
inline constexpr double kResponsibilityFloor = 1e-12;

struct LearnConfig {
    std::size_t num_classes = 6;
    GridShape pattern_dims{30, 40};
    std::size_t max_iters = 100;
    std::size_t restarts = 3;
    std::uint64_t rng_seed = 0;
    double convergence = 1e-5;           // relative free-energy improvement
    std::size_t convergence_window = 3;  // consecutive iterations below the threshold
    SelectionConfig selection;
    InitMode init = InitMode::patch_segments;
    unsigned threads = 1;
    std::size_t snapshot_every = 0;  // record π and mean α every k iterations (0 = never)

    void validate() const {
        if (num_classes < 1) throw std::invalid_argument("need at least one class");
        if (max_iters < 1) throw std::invalid_argument("max_iters must be >= 1");
        if (restarts < 1) throw std::invalid_argument("restarts must be >= 1");
        if (!(convergence > 0.0)) throw std::invalid_argument("convergence threshold must be positive");
        if (convergence_window < 1) throw std::invalid_argument("convergence window must be >= 1");
    }
};

struct IterationRecord {
    std::size_t restart = 0;
    std::size_t iteration = 0;   // 1-based
    double free_energy = 0.0;    // of the parameters entering this iteration
    EvalCounters counters;
    std::size_t reinitialized = 0;  // dead classes reset by this iteration's M-step
    std::vector<double> pi;         // filled on snapshot iterations
    std::vector<double> mean_mask;  // filled on snapshot iterations
};

struct EmResult {
    ModelParams params;
    std::vector<IterationRecord> trace;
    double final_free_energy = kNegInf;  // of the returned parameters
    std::size_t iterations = 0;
    bool converged = false;
    std::uint64_t seed = 0;
};

using IterationCallback = std::function<void(const IterationRecord&)>;

namespace detail {

struct FeatureMoments {
    std::vector<double> mean, variance, lo, hi;
};

/// Per-dimension population mean/variance/range over every cell of every grid.
inline FeatureMoments feature_moments(std::span<const FeatureGrid> dataset) {
    const std::size_t F = dataset.front().feature_dim;
    FeatureMoments m{std::vector<double>(F, 0.0), std::vector<double>(F, 0.0),
                     std::vector<double>(F, std::numeric_limits<double>::infinity()),
                     std::vector<double>(F, -std::numeric_limits<double>::infinity())};
    double count = 0.0;
    for (const auto& g : dataset) {
        for (std::size_t f = 0; f < F; ++f) {
            for (double v : g.plane(f)) {
                m.mean[f] += v;
                m.lo[f] = std::min(m.lo[f], v);
                m.hi[f] = std::max(m.hi[f], v);
            }
        }
        count += static_cast<double>(g.cells());
    }
    for (double& v : m.mean) v /= count;
    for (const auto& g : dataset)
        for (std::size_t f = 0; f < F; ++f)
            for (double v : g.plane(f)) m.variance[f] += (v - m.mean[f]) * (v - m.mean[f]);
    for (double& v : m.variance) v /= count;
    return m;
}

inline constexpr std::uint64_t kInitStream = 1;
inline constexpr std::uint64_t kDeadClassStream = 2;
inline constexpr std::uint64_t kRestartStream = 3;

/// Draws means and masks of one class from its own random stream.
inline void init_class(ModelParams& params, std::size_t c, std::span<const FeatureGrid> dataset,
                       const FeatureMoments& moments, InitMode mode, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const GridShape P = params.pattern_dims, D = params.patch_dims;
    const std::size_t F = params.feature_dim;
    if (mode == InitMode::uniform_cube) {
        for (std::size_t i = 0; i < P.size(); ++i)
            for (std::size_t f = 0; f < F; ++f)
                params.mean(c, i)[f] = moments.lo[f] + unit(rng) * (moments.hi[f] - moments.lo[f]);
    } else {
        std::uniform_int_distribution<std::size_t> pick(0, dataset.size() - 1);
        std::uniform_int_distribution<std::size_t> row(0, D.rows - P.rows), col(0, D.cols - P.cols);
        const auto& src = dataset[pick(rng)];
        const std::size_t r0 = row(rng), c0 = col(rng);
        for (std::size_t r = 0; r < P.rows; ++r)
            for (std::size_t q = 0; q < P.cols; ++q)
                for (std::size_t f = 0; f < F; ++f) params.mean(c, r * P.cols + q)[f] = src.at(r0 + r, c0 + q, f);
    }
    for (std::size_t i = 0; i < P.size(); ++i) {
        params.mask(c, i) = unit(rng);
        for (std::size_t f = 0; f < F; ++f) params.variance(c, i)[f] = std::max(moments.variance[f], kVarianceFloor);
    }
}

}  // namespace detail

/// Initial parameters: means from the feature cube or from random patch
/// segments, variances from the dataset's per-dimension variance, masks
/// uniform on [0,1], equal mixing proportions. Each class draws from its own
/// seeded stream, so relabeling classes permutes the initialization.
inline ModelParams initialize(std::span<const FeatureGrid> dataset, const LearnConfig& config,
                              const BackgroundDensity& bg) {
    config.validate();
    if (dataset.size() < config.num_classes)
        throw std::invalid_argument("dataset has fewer patches than classes");
    bg.require_fitted();
    const auto& first = dataset.front();
    ModelParams params(config.num_classes, first.dims, config.pattern_dims, first.feature_dim);
    for (const auto& g : dataset)
        if (g.dims != first.dims || g.feature_dim != first.feature_dim)
            throw std::invalid_argument("all patches must share dims and feature dimension");
    const auto moments = detail::feature_moments(dataset);
    for (std::size_t c = 0; c < config.num_classes; ++c)
        detail::init_class(params, c, dataset, moments, config.init, derive_seed(config.rng_seed, detail::kInitStream, c));
    params.apply_variance_floor();
    return params;
}

/// Expected sufficient statistics of one E-step. Feature sums are taken
/// relative to the current means to keep the variance update well conditioned.
class SufficientStats {
public:
    explicit SufficientStats(const ModelParams& current)
        : current_(&current),
          class_mass_(current.num_classes, 0.0),
          cell_mass_(current.num_classes * current.pattern_cells(), 0.0),
          first_(cell_mass_.size() * current.feature_dim, 0.0),
          second_(first_.size(), 0.0) {}

    void add(const FeatureGrid& patch, const PosteriorSummary& post) {
        const auto& p = *current_;
        const GridShape P = p.pattern_dims, D = p.patch_dims;
        const std::size_t F = p.feature_dim, cells = P.size();
        for (std::size_t k = 0; k < post.states.size(); ++k) {
            const double q = post.q[k];
            if (q == 0.0) continue;
            const auto [c, x] = post.states[k];
            class_mass_[c] += q;
            const double* mp = &post.mask_post[k * cells];
            for (std::size_t r = 0; r < P.rows; ++r) {
                const std::size_t dr = (r + x.row) % D.rows;
                for (std::size_t col = 0; col < P.cols; ++col) {
                    const std::size_t i = r * P.cols + col;
                    const double resp = q * mp[i];
                    if (resp == 0.0) continue;
                    const std::size_t d = dr * D.cols + (col + x.col) % D.cols;
                    const std::size_t ci = p.cell_index(c, i);
                    cell_mass_[ci] += resp;
                    const double* w = p.mean(c, i);
                    for (std::size_t f = 0; f < F; ++f) {
                        const double diff = patch.at(d, f) - w[f];
                        first_[ci * F + f] += resp * diff;
                        second_[ci * F + f] += resp * diff * diff;
                    }
                }
            }
        }
        ++patches_;
    }

    void merge(const SufficientStats& o) {
        for (std::size_t k = 0; k < class_mass_.size(); ++k) class_mass_[k] += o.class_mass_[k];
        for (std::size_t k = 0; k < cell_mass_.size(); ++k) cell_mass_[k] += o.cell_mass_[k];
        for (std::size_t k = 0; k < first_.size(); ++k) {
            first_[k] += o.first_[k];
            second_[k] += o.second_[k];
        }
        patches_ += o.patches_;
    }

    std::size_t patches() const { return patches_; }
    double class_mass(std::size_t c) const { return class_mass_[c]; }

    /// Closed-form updates. Returns the indices of classes whose responsibility
    /// mass fell below 1e-6 N; the caller re-initializes those.
    ModelParams finalize(std::vector<std::size_t>* dead = nullptr) const {
        const auto& cur = *current_;
        ModelParams next = cur;
        const std::size_t C = cur.num_classes, cells = cur.pattern_cells(), F = cur.feature_dim;
        const double N = static_cast<double>(patches_);
        double total = 0.0;
        for (std::size_t c = 0; c < C; ++c) {
            const double mass = class_mass_[c];
            if (mass < kDeadClassFraction * N || mass <= 0.0) {
                if (dead) dead->push_back(c);
                next.pi[c] = 1.0 / static_cast<double>(C);
                total += next.pi[c];
                continue;
            }
            next.pi[c] = mass / N;
            total += next.pi[c];
            for (std::size_t i = 0; i < cells; ++i) {
                const std::size_t ci = cur.cell_index(c, i);
                const double r = cell_mass_[ci];
                next.masks[ci] = std::clamp(r / mass, 0.0, 1.0);
                if (r < kResponsibilityFloor) continue;  // keep previous mean and variance
                for (std::size_t f = 0; f < F; ++f) {
                    const double m1 = first_[ci * F + f] / r;
                    const double m2 = second_[ci * F + f] / r;
                    next.means[ci * F + f] = cur.means[ci * F + f] + m1;
                    next.variances[ci * F + f] = std::max(m2 - m1 * m1, kVarianceFloor);
                }
            }
        }
        for (double& p : next.pi) p /= total;
        return next;
    }

private:
    const ModelParams* current_;
    std::vector<double> class_mass_;
    std::vector<double> cell_mass_;
    std::vector<double> first_;
    std::vector<double> second_;
    std::size_t patches_ = 0;
};

/// M-step from precomputed posteriors (one summary per patch, in dataset order).
/// Dead classes are re-initialized from `config` with the given iteration salt.
inline ModelParams m_step(std::span<const FeatureGrid> dataset, std::span<const PosteriorSummary> posteriors,
                          const ModelParams& current, const LearnConfig& config, std::size_t iteration = 0,
                          std::size_t* reinitialized = nullptr) {
    if (dataset.size() != posteriors.size()) throw std::invalid_argument("one posterior summary per patch required");
    SufficientStats stats(current);
    for (std::size_t n = 0; n < dataset.size(); ++n) stats.add(dataset[n], posteriors[n]);
    std::vector<std::size_t> dead;
    ModelParams next = stats.finalize(&dead);
    if (!dead.empty()) {
        const auto moments = detail::feature_moments(dataset);
        for (std::size_t c : dead)
            detail::init_class(next, c, dataset, moments, config.init,
                               derive_seed(config.rng_seed, detail::kDeadClassStream, iteration * next.num_classes + c));
    }
    if (reinitialized) *reinitialized = dead.size();
    return next;
}

namespace detail {

struct EStepResult {
    SufficientStats stats;
    double free_energy = 0.0;
    EvalCounters counters;
};

inline constexpr std::size_t kEStepBlock = 16;

/// Truncated E-step over the dataset, fused with statistics accumulation.
/// Per-block partials are merged in block order for thread-count independence.
inline EStepResult e_step(std::span<const FeatureGrid> dataset, const ModelParams& params,
                          const BackgroundDensity& bg, const SelectionConfig& selection, unsigned threads) {
    const ModelCache cache(params, bg);
    const auto reliable = reliable_cells_all(params, selection.lambda);
    const std::size_t blocks = (dataset.size() + kEStepBlock - 1) / kEStepBlock;
    std::vector<std::optional<SufficientStats>> pending(blocks);
    std::vector<double> evidence(dataset.size());
    std::vector<EvalCounters> block_counters(blocks);
    EStepResult out{SufficientStats(params), 0.0, {}};
    std::mutex merge_guard;
    std::size_t next_merge = 0;
    parallel_blocks(dataset.size(), kEStepBlock, threads, [&](std::size_t b, std::size_t begin, std::size_t end) {
        SufficientStats local(params);
        for (std::size_t n = begin; n < end; ++n) {
            const auto post = infer_patch(cache, reliable, dataset[n], selection, &block_counters[b]);
            evidence[n] = post.log_evidence_trunc;
            local.add(dataset[n], post);
        }
        // Merge strictly in block order; out-of-order blocks wait in `pending`.
        std::lock_guard lock(merge_guard);
        pending[b] = std::move(local);
        while (next_merge < blocks && pending[next_merge]) {
            out.stats.merge(*pending[next_merge]);
            pending[next_merge].reset();
            ++next_merge;
        }
    });
    for (const auto& c : block_counters) out.counters += c;
    for (double e : evidence) out.free_energy += e;
    return out;
}

}  // namespace detail

/// EM from given initial parameters. Each iteration is one E-step followed by
/// one M-step; the loop stops after max_iters or once the relative free-energy
/// improvement stays below the threshold for `convergence_window` iterations.
inline EmResult run_em_from(std::span<const FeatureGrid> dataset, ModelParams params, const LearnConfig& config,
                            const BackgroundDensity& bg, std::size_t restart_index = 0,
                            const IterationCallback& on_iteration = {}) {
    config.validate();
    config.selection.validate(params);
    EmResult result;
    result.seed = config.rng_seed;
    std::size_t streak = 0;
    std::optional<double> previous;
    for (std::size_t t = 1; t <= config.max_iters; ++t) {
        auto estep = detail::e_step(dataset, params, bg, config.selection, config.threads);
        IterationRecord rec;
        rec.restart = restart_index;
        rec.iteration = t;
        rec.free_energy = estep.free_energy;
        rec.counters = estep.counters;

        std::vector<std::size_t> dead;
        ModelParams next = estep.stats.finalize(&dead);
        if (!dead.empty()) {
            const auto moments = detail::feature_moments(dataset);
            for (std::size_t c : dead)
                detail::init_class(next, c, dataset, moments, config.init,
                                   derive_seed(config.rng_seed, detail::kDeadClassStream, t * next.num_classes + c));
        }
        rec.reinitialized = dead.size();
        params = std::move(next);
        if (config.snapshot_every > 0 && t % config.snapshot_every == 0) {
            rec.pi = params.pi;
            for (std::size_t c = 0; c < params.num_classes; ++c) rec.mean_mask.push_back(params.mean_mask(c));
        }
        result.iterations = t;
        if (previous) {
            const double rel = (estep.free_energy - *previous) / std::max(std::abs(*previous), 1e-300);
            streak = rel < config.convergence ? streak + 1 : 0;
        }
        previous = estep.free_energy;
        if (on_iteration) on_iteration(rec);
        result.trace.push_back(std::move(rec));
        if (streak >= config.convergence_window) {
            result.converged = true;
            break;
        }
    }
    result.final_free_energy = free_energy(dataset, params, bg, config.selection, config.threads);
    result.params = std::move(params);
    return result;
}

inline EmResult run_em(std::span<const FeatureGrid> dataset, const LearnConfig& config, const BackgroundDensity& bg,
                       std::size_t restart_index = 0, const IterationCallback& on_iteration = {}) {
    return run_em_from(dataset, initialize(dataset, config, bg), config, bg, restart_index, on_iteration);
}

struct ClassThresholds {
    double mask = 0.5;  // mean α relative to the median over classes
    double pi = 0.25;   // π_c relative to 1/C
};

struct ClassReport {
    struct Entry {
        double pi = 0.0;
        double mean_mask = 0.0;
        bool is_character = false;
    };
    std::vector<Entry> classes;

    std::size_t num_characters() const {
        return static_cast<std::size_t>(std::count_if(classes.begin(), classes.end(), [](const Entry& e) { return e.is_character; }));
    }
    std::vector<std::size_t> character_classes() const {
        std::vector<std::size_t> out;
        for (std::size_t c = 0; c < classes.size(); ++c)
            if (classes[c].is_character) out.push_back(c);
        return out;
    }
};

/// A class represents a character iff its mean mask strength is at least
/// τ_mask times the median over classes and π_c ≥ τ_pi / C.
inline ClassReport classify_classes(const ModelParams& params, const ClassThresholds& thresholds = {}) {
    ClassReport report;
    std::vector<double> strengths;
    for (std::size_t c = 0; c < params.num_classes; ++c) strengths.push_back(params.mean_mask(c));
    std::vector<double> sorted = strengths;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    const double median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    const double uniform = 1.0 / static_cast<double>(params.num_classes);
    for (std::size_t c = 0; c < params.num_classes; ++c) {
        const bool strong = strengths[c] >= thresholds.mask * median;
        const bool frequent = params.pi[c] >= thresholds.pi * uniform;
        report.classes.push_back({params.pi[c], strengths[c], strong && frequent});
    }
    return report;
}

struct RestartResult {
    EmResult best;
    std::size_t best_index = 0;
    std::vector<std::size_t> characters_per_restart;
    std::vector<double> free_energy_per_restart;
};

/// Seed of restart r: the configured seed for r = 0, derived seeds after that.
inline std::uint64_t restart_seed(std::uint64_t seed, std::size_t r) {
    return r == 0 ? seed : derive_seed(seed, detail::kRestartStream, r);
}

/// Runs EM `restarts` times and keeps the run with the most character classes,
/// ties going to the higher final free energy, then the earlier restart.
inline RestartResult multi_restart(std::span<const FeatureGrid> dataset, const LearnConfig& config,
                                   const BackgroundDensity& bg, const ClassThresholds& thresholds = {},
                                   const IterationCallback& on_iteration = {}) {
    config.validate();
    RestartResult out;
    for (std::size_t r = 0; r < config.restarts; ++r) {
        LearnConfig cfg = config;
        cfg.rng_seed = restart_seed(config.rng_seed, r);
        EmResult res = run_em(dataset, cfg, bg, r, on_iteration);
        const std::size_t chars = classify_classes(res.params, thresholds).num_characters();
        out.characters_per_restart.push_back(chars);
        out.free_energy_per_restart.push_back(res.final_free_energy);
        const bool better = r == 0 || chars > out.characters_per_restart[out.best_index] ||
                            (chars == out.characters_per_restart[out.best_index] &&
                             res.final_free_energy > out.best.final_free_energy);
        if (better) {
            out.best = std::move(res);
            out.best_index = r;
        }
    }
    return out;
}

}  // namespace docclean
