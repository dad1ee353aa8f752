#pragma once

// Posterior computations for one patch: mask posteriors, joint (class,
// position) scores, the selection function, the truncated candidate set, the
// truncated posterior and the free energy.
//
// Every per-cell quantity is carried in log space relative to the background:
//   u     = log N(y; w, Φ) - log H_B(y)
//   term  = log((1-α) + α e^u)          (per-cell evidence for the pattern)
//   post  = α e^u / ((1-α) + α e^u)      (mask posterior)
// so that log p(c, x, Y) = log π_c - log(D1 D2) + Σ_d log H_B(y_d) + Σ_i term_i.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "docclean/background.hpp"
#include "docclean/common.hpp"
#include "docclean/features.hpp"
#include "docclean/model.hpp"

namespace docclean {

inline constexpr std::size_t kDefaultLambda = 200;
inline constexpr double kDefaultTruncation = 0.02;

struct SelectionConfig {
    std::size_t lambda = kDefaultLambda;  // reliable cells per class; values above P1*P2 mean all cells
    double truncation = kDefaultTruncation;  // K, fraction of the joint (class, position) space kept

    /// λ = min(200, P1 P2), K = 0.02.
    static SelectionConfig defaults_for(const ModelParams& params) {
        return {std::min(kDefaultLambda, params.pattern_cells()), kDefaultTruncation};
    }
    /// λ = P1 P2 and K = 1: the exact posterior.
    static SelectionConfig exact(const ModelParams& params) { return {params.pattern_cells(), 1.0}; }

    void validate(const ModelParams& /*params*/) const {
        if (lambda < 1) throw std::invalid_argument("lambda must be >= 1");
        if (!(truncation > 0.0 && truncation <= 1.0)) throw std::invalid_argument("truncation K must lie in (0, 1]");
    }
};

struct JointState {
    std::size_t class_index = 0;
    Position position;

    friend bool operator==(const JointState&, const JointState&) = default;
};

struct CandidateSet {
    std::vector<JointState> entries;  // ordered by selection rank
    std::size_t capacity = 0;
};

struct PosteriorSummary {
    std::vector<JointState> states;  // the candidate set, in rank order
    std::vector<double> log_joint;   // log p(c, x, Y | Θ) per state
    std::vector<double> q;           // truncated posterior, sums to one
    std::vector<double> mask_post;   // states x P1*P2, p(m_i = 1 | Y, c, x, Θ)
    double log_evidence_trunc = kNegInf;

    std::span<const double> mask_posterior(std::size_t k, std::size_t pattern_cells) const {
        return {mask_post.data() + k * pattern_cells, pattern_cells};
    }
};

/// Work counters for the complexity accounting of an E-step.
struct EvalCounters {
    std::uint64_t joint_states = 0;      // full joint scores (all P1*P2 cells)
    std::uint64_t selection_states = 0;  // selection scores (λ cells)
    std::uint64_t cell_terms = 0;        // per-cell evidence terms evaluated

    EvalCounters& operator+=(const EvalCounters& o) {
        joint_states += o.joint_states;
        selection_states += o.selection_states;
        cell_terms += o.cell_terms;
        return *this;
    }
};

/// ⌈K C D1 D2⌉, treating values within 1e-9 of an integer as that integer so
/// that e.g. 0.02 * 13200 gives 264 and not 265.
inline std::size_t candidate_capacity(double truncation, std::size_t joint_space) {
    const double raw = truncation * static_cast<double>(joint_space);
    const double nearest = std::round(raw);
    const bool integral = std::abs(raw - nearest) <= 1e-9 * std::max(1.0, raw);
    if (!integral && raw < 1.0) throw std::invalid_argument("K*C*D1*D2 < 1: the candidate set would be empty");
    const double n = integral ? nearest : std::ceil(raw);
    if (n < 1.0) throw std::invalid_argument("K*C*D1*D2 < 1: the candidate set would be empty");
    return std::min(joint_space, static_cast<std::size_t>(n));
}

/// The λ pattern cells with the largest mask parameters, ties by row-major index.
inline std::vector<std::size_t> reliable_cells(const ModelParams& params, std::size_t c, std::size_t lambda) {
    std::vector<std::size_t> idx(params.pattern_cells());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return params.mask(c, a) > params.mask(c, b); });
    idx.resize(std::min(lambda, idx.size()));
    return idx;
}

namespace detail {

enum class MaskKind : std::uint8_t { never, always, mixed };

/// log(1 + e^t) for any t.
inline double softplus(double t) { return std::max(t, 0.0) + std::log(1.0 + std::exp(-std::abs(t))); }

inline double sigmoid(double t) {
    if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
    const double e = std::exp(t);
    return e / (1.0 + e);
}

}  // namespace detail

/// Precomputed per-cell constants of a fixed parameter set. Immutable and
/// shareable across threads.
class ModelCache {
public:
    ModelCache(const ModelParams& params, const BackgroundDensity& bg) : params_(&params), bg_(&bg) {
        bg.require_fitted();
        if (bg.feature_dim() != params.feature_dim)
            throw std::invalid_argument("background and model feature dimensions differ");
        const std::size_t cells = params.num_classes * params.pattern_cells();
        const std::size_t F = params.feature_dim;
        norm_.resize(cells);
        half_inv_var_.resize(cells * F);
        log1m_alpha_.resize(cells);
        logit_.resize(cells);
        kind_.resize(cells);
        log_pi_.resize(params.num_classes);
        always_.resize(params.num_classes);
        for (std::size_t k = 0; k < cells; ++k) {
            double logdet = 0.0;
            for (std::size_t f = 0; f < F; ++f) {
                const double v = params.variances[k * F + f];
                logdet += std::log(v);
                half_inv_var_[k * F + f] = 0.5 / v;
            }
            norm_[k] = -0.5 * (static_cast<double>(F) * kLog2Pi + logdet);
            const double a = params.masks[k];
            // never: t = -inf makes the vector formulas give term 0, post 0.
            // always: patched after the vector pass.
            log1m_alpha_[k] = 0.0;
            logit_[k] = 0.0;
            if (a <= 0.0) {
                kind_[k] = detail::MaskKind::never;
                logit_[k] = -std::numeric_limits<double>::infinity();
            } else if (a >= 1.0) {
                kind_[k] = detail::MaskKind::always;
                always_[k / params.pattern_cells()].push_back(k % params.pattern_cells());
            } else {
                kind_[k] = detail::MaskKind::mixed;
                log1m_alpha_[k] = std::log1p(-a);
                logit_[k] = std::log(a) - log1m_alpha_[k];
            }
        }
        for (std::size_t c = 0; c < params.num_classes; ++c) log_pi_[c] = std::log(params.pi[c]);
        log_positions_ = std::log(static_cast<double>(params.positions()));
    }

    const ModelParams& params() const { return *params_; }
    const BackgroundDensity& background() const { return *bg_; }

    double log_prior(std::size_t c) const { return log_pi_[c] - log_positions_; }

    /// u = log N(y_d; w_ci, Φ_ci) - log H_B(y_d) for one pattern/patch cell pair.
    double log_ratio(std::size_t c, std::size_t i, const FeatureGrid& patch, std::size_t d, double log_bg) const {
        const std::size_t k = params_->cell_index(c, i), F = params_->feature_dim;
        const double* w = &params_->means[k * F];
        const double* h = &half_inv_var_[k * F];
        double acc = norm_[k] - log_bg;
        for (std::size_t f = 0; f < F; ++f) {
            const double diff = patch.at(d, f) - w[f];
            acc -= h[f] * diff * diff;
        }
        return acc;
    }

    /// Evidence term and mask posterior for cell (c, i) given u.
    void cell_term(std::size_t c, std::size_t i, double u, double& term, double& post) const {
        const std::size_t k = params_->cell_index(c, i);
        switch (kind_[k]) {
            case detail::MaskKind::never:
                term = 0.0;
                post = 0.0;
                return;
            case detail::MaskKind::always:
                term = u;
                post = 1.0;
                return;
            case detail::MaskKind::mixed: {
                const double t = logit_[k] + u;
                term = log1m_alpha_[k] + detail::softplus(t);
                post = detail::sigmoid(t);
                return;
            }
        }
    }

    /// Σ_i term_i for class c at position x, with the mask posteriors written
    /// to mask_post when given.
    double shifted_evidence(std::size_t c, Position x, const FeatureGrid& patch, std::span<const double> log_bg,
                            double* mask_post) const {
        using Eigen::ArrayXd;
        using Strided = Eigen::Map<const ArrayXd, 0, Eigen::InnerStride<>>;
        const GridShape D = params_->patch_dims, P = params_->pattern_dims;
        const std::size_t F = params_->feature_dim, m = P.size(), k0 = c * m, n = D.size();
        const auto em = static_cast<Eigen::Index>(m);
        std::vector<std::size_t> idx(m);
        for (std::size_t r = 0, i = 0; r < P.rows; ++r) {
            const std::size_t dr = (r + x.row) % D.rows;
            for (std::size_t q = 0; q < P.cols; ++q) idx[i++] = dr * D.cols + (q + x.col) % D.cols;
        }
        ArrayXd u(em), y(em);
        for (std::size_t i = 0; i < m; ++i) u[static_cast<Eigen::Index>(i)] = -log_bg[idx[i]];
        u += Eigen::Map<const ArrayXd>(&norm_[k0], em);
        for (std::size_t f = 0; f < F; ++f) {
            const double* plane = patch.values.data() + f * n;
            for (std::size_t i = 0; i < m; ++i) y[static_cast<Eigen::Index>(i)] = plane[idx[i]];
            const Strided w(&params_->means[k0 * F + f], em, Eigen::InnerStride<>(static_cast<Eigen::Index>(F)));
            const Strided h(&half_inv_var_[k0 * F + f], em, Eigen::InnerStride<>(static_cast<Eigen::Index>(F)));
            u -= h * (y - w).square();
        }
        const ArrayXd t = u + Eigen::Map<const ArrayXd>(&logit_[k0], em);
        ArrayXd term = Eigen::Map<const ArrayXd>(&log1m_alpha_[k0], em) + t.max(0.0) + (1.0 + (-t.abs()).exp()).log();
        for (std::size_t i : always_[c]) term[static_cast<Eigen::Index>(i)] = u[static_cast<Eigen::Index>(i)];
        if (mask_post) {
            // Computed into owned (aligned) storage: Eigen splits scalar and
            // packet exp by destination alignment, which would make the
            // result depend on where the caller's buffer happens to sit.
            ArrayXd post = 1.0 / (1.0 + (-t).exp());
            for (std::size_t i : always_[c]) post[static_cast<Eigen::Index>(i)] = 1.0;
            std::copy(post.begin(), post.end(), mask_post);
        }
        return term.sum();
    }

    /// Adds Σ_{i in cells} term_i(x) into scores[x] for every position x of
    /// class c, one pattern cell at a time across the whole patch plane.
    void accumulate_position_terms(std::size_t c, std::span<const std::size_t> cells, const FeatureGrid& patch,
                                   std::span<const double> log_bg, std::span<double> scores) const {
        using Eigen::ArrayXd;
        const GridShape D = params_->patch_dims, P = params_->pattern_dims;
        const std::size_t F = params_->feature_dim, n = D.size();
        const Eigen::Map<const ArrayXd> lbg(log_bg.data(), static_cast<Eigen::Index>(n));
        ArrayXd u(static_cast<Eigen::Index>(n)), term(static_cast<Eigen::Index>(n));
        for (std::size_t i : cells) {
            const std::size_t k = params_->cell_index(c, i);
            if (kind_[k] == detail::MaskKind::never) continue;
            const double* w = &params_->means[k * F];
            const double* h = &half_inv_var_[k * F];
            u = norm_[k] - lbg;
            for (std::size_t f = 0; f < F; ++f) {
                const Eigen::Map<const ArrayXd> y(patch.values.data() + f * n, static_cast<Eigen::Index>(n));
                u -= h[f] * (y - w[f]).square();
            }
            if (kind_[k] == detail::MaskKind::always) {
                term = u;
            } else {
                const ArrayXd t = u + logit_[k];
                term = log1m_alpha_[k] + t.max(0.0) + (1.0 + (-t.abs()).exp()).log();
            }
            // Patch cell d = (i + x) mod D  <=>  x = (d - i) mod D.
            const std::size_t ir = i / P.cols, ic = i % P.cols;
            for (std::size_t dr = 0; dr < D.rows; ++dr) {
                const std::size_t xr = (dr + D.rows - ir) % D.rows;
                const double* src = term.data() + dr * D.cols;
                double* dst = scores.data() + xr * D.cols;
                // d_col in [ic, D2) -> x_col in [0, D2 - ic); d_col in [0, ic) -> x_col in [D2 - ic, D2)
                const std::size_t tail = D.cols - ic;
                for (std::size_t q = 0; q < tail; ++q) dst[q] += src[ic + q];
                for (std::size_t q = 0; q < ic; ++q) dst[tail + q] += src[q];
            }
        }
    }

private:
    const ModelParams* params_;
    const BackgroundDensity* bg_;
    std::vector<double> norm_;
    std::vector<double> half_inv_var_;
    std::vector<double> log1m_alpha_;
    std::vector<double> logit_;
    std::vector<detail::MaskKind> kind_;
    std::vector<std::vector<std::size_t>> always_;
    std::vector<double> log_pi_;
    double log_positions_ = 0.0;
};

/// Per-patch evaluation against a cached model.
class PatchEvaluator {
public:
    PatchEvaluator(const ModelCache& cache, const FeatureGrid& patch) : cache_(&cache), patch_(&patch) {
        const auto& p = cache.params();
        if (patch.dims != p.patch_dims || patch.feature_dim != p.feature_dim)
            throw std::invalid_argument("patch dims/features do not match the model");
        log_bg_ = cache.background().log_density_plane(patch);
        total_bg_ = 0.0;
        for (double v : log_bg_) total_bg_ += v;
    }

    const std::vector<double>& log_bg() const { return log_bg_; }
    double total_log_bg() const { return total_bg_; }

    /// log p(c, x, Y | Θ); optionally writes the P1*P2 mask posteriors.
    double joint_log_score(std::size_t c, Position x, double* mask_post = nullptr) const {
        const auto& p = cache_->params();
        const double acc = cache_->shifted_evidence(c, x, *patch_, log_bg_, mask_post);
        counters.joint_states += 1;
        counters.cell_terms += p.pattern_cells();
        return cache_->log_prior(c) + total_bg_ + acc;
    }

    std::vector<double> mask_posterior(std::size_t c, Position x) const {
        std::vector<double> post(cache_->params().pattern_cells());
        const auto saved = counters;
        joint_log_score(c, x, post.data());
        counters = saved;
        return post;
    }

    /// Selection scores for every (c, x), laid out c-major then row-major x.
    /// Cells outside the λ most reliable ones are scored as background, so with
    /// λ = P1 P2 the score equals the joint log score.
    std::vector<double> selection_scores(const std::vector<std::vector<std::size_t>>& reliable) const {
        const auto& p = cache_->params();
        const std::size_t n = p.positions();
        std::vector<double> scores(p.num_classes * n, 0.0);
        for (std::size_t c = 0; c < p.num_classes; ++c) {
            std::span<double> block(scores.data() + c * n, n);
            cache_->accumulate_position_terms(c, reliable[c], *patch_, log_bg_, block);
            const double offset = cache_->log_prior(c) + total_bg_;
            for (double& s : block) s += offset;
            counters.selection_states += n;
            counters.cell_terms += n * reliable[c].size();
        }
        return scores;
    }

    mutable EvalCounters counters;

private:
    const ModelCache* cache_;
    const FeatureGrid* patch_;
    std::vector<double> log_bg_;
    double total_bg_ = 0.0;
};

// ---------------------------------------------------------------------------
// Free-function surface over (params, bg, patch).

inline std::vector<double> mask_posterior(const ModelParams& params, const BackgroundDensity& bg,
                                          const FeatureGrid& patch, std::size_t c, Position x) {
    const ModelCache cache(params, bg);
    return PatchEvaluator(cache, patch).mask_posterior(c, x);
}

inline double joint_log_score(const ModelParams& params, const BackgroundDensity& bg, const FeatureGrid& patch,
                              std::size_t c, Position x) {
    const ModelCache cache(params, bg);
    return PatchEvaluator(cache, patch).joint_log_score(c, x);
}

inline std::vector<std::vector<std::size_t>> reliable_cells_all(const ModelParams& params, std::size_t lambda) {
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t c = 0; c < params.num_classes; ++c) out.push_back(reliable_cells(params, c, lambda));
    return out;
}

inline std::vector<double> selection_scores(const ModelParams& params, const BackgroundDensity& bg,
                                            const FeatureGrid& patch, const SelectionConfig& config) {
    config.validate(params);
    const ModelCache cache(params, bg);
    return PatchEvaluator(cache, patch).selection_scores(reliable_cells_all(params, config.lambda));
}

/// Top ⌈K C D1 D2⌉ states by score; ties go to the lower class, then the lower
/// row-major position. `positions` is D1 D2 and `patch_cols` is D2.
inline CandidateSet build_candidates(std::span<const double> scores, const SelectionConfig& config,
                                     std::size_t positions, std::size_t patch_cols) {
    if (positions == 0 || scores.size() % positions != 0)
        throw std::invalid_argument("score array is not a whole number of classes");
    for (double s : scores)
        if (!std::isfinite(s)) throw std::invalid_argument("selection scores must be finite");
    CandidateSet set;
    set.capacity = candidate_capacity(config.truncation, scores.size());
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    const auto better = [&](std::size_t a, std::size_t b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); };
    if (set.capacity < order.size()) {
        std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(set.capacity), order.end(), better);
        order.resize(set.capacity);
    }
    std::sort(order.begin(), order.end(), better);
    set.entries.reserve(order.size());
    for (std::size_t s : order) {
        const std::size_t x = s % positions;
        set.entries.push_back({s / positions, {x / patch_cols, x % patch_cols}});
    }
    return set;
}

inline CandidateSet build_candidates(std::span<const double> scores, const SelectionConfig& config,
                                     const ModelParams& params) {
    return build_candidates(scores, config, params.positions(), params.patch_dims.cols);
}

/// q_n over the candidate set, with per-state mask posteriors.
inline PosteriorSummary truncated_posterior(const PatchEvaluator& eval, const CandidateSet& candidates,
                                            std::size_t pattern_cells) {
    if (candidates.entries.empty()) throw std::invalid_argument("candidate set is empty");
    PosteriorSummary s;
    s.states = candidates.entries;
    const std::size_t n = s.states.size();
    s.log_joint.resize(n);
    s.mask_post.resize(n * pattern_cells);
    for (std::size_t k = 0; k < n; ++k)
        s.log_joint[k] = eval.joint_log_score(s.states[k].class_index, s.states[k].position, &s.mask_post[k * pattern_cells]);
    s.log_evidence_trunc = log_sum_exp(s.log_joint);
    s.q.resize(n);
    double total = 0.0;
    for (std::size_t k = 0; k < n; ++k) total += (s.q[k] = std::exp(s.log_joint[k] - s.log_evidence_trunc));
    for (double& v : s.q) v /= total;
    return s;
}

inline PosteriorSummary truncated_posterior(const ModelParams& params, const BackgroundDensity& bg,
                                            const FeatureGrid& patch, const CandidateSet& candidates) {
    const ModelCache cache(params, bg);
    return truncated_posterior(PatchEvaluator(cache, patch), candidates, params.pattern_cells());
}

/// Every (c, x) in canonical order (class-major, row-major position).
inline CandidateSet full_joint_space(const ModelParams& params) {
    CandidateSet set;
    set.capacity = params.num_classes * params.positions();
    for (std::size_t c = 0; c < params.num_classes; ++c)
        for (std::size_t r = 0; r < params.patch_dims.rows; ++r)
            for (std::size_t q = 0; q < params.patch_dims.cols; ++q) set.entries.push_back({c, {r, q}});
    return set;
}

/// One complete truncated E-step for a patch: selection, candidates, posterior.
/// With K = 1 the selection stage is skipped and the full joint space is used.
inline PosteriorSummary infer_patch(const ModelCache& cache, const std::vector<std::vector<std::size_t>>& reliable,
                                    const FeatureGrid& patch, const SelectionConfig& config,
                                    EvalCounters* counters = nullptr) {
    const auto& params = cache.params();
    PatchEvaluator eval(cache, patch);
    CandidateSet candidates;
    if (config.truncation >= 1.0) {
        candidates = full_joint_space(params);
    } else {
        const auto scores = eval.selection_scores(reliable);
        candidates = build_candidates(scores, config, params);
    }
    auto summary = truncated_posterior(eval, candidates, params.pattern_cells());
    if (counters) *counters += eval.counters;
    return summary;
}

inline PosteriorSummary infer_patch(const ModelParams& params, const BackgroundDensity& bg, const FeatureGrid& patch,
                                    const SelectionConfig& config, EvalCounters* counters = nullptr) {
    config.validate(params);
    const ModelCache cache(params, bg);
    return infer_patch(cache, reliable_cells_all(params, config.lambda), patch, config, counters);
}

/// Σ_n log Σ_{(c,x) in K_n} p(c, x, Y_n | Θ). The entropy terms of the free
/// energy cancel against the renormalized joint, leaving the truncated log
/// evidence; with K = 1 this is the exact log-likelihood.
inline double free_energy(std::span<const FeatureGrid> dataset, const ModelParams& params,
                          const BackgroundDensity& bg, const SelectionConfig& config, unsigned threads = 1) {
    config.validate(params);
    const ModelCache cache(params, bg);
    const auto reliable = reliable_cells_all(params, config.lambda);
    std::vector<double> per_patch(dataset.size());
    parallel_blocks(dataset.size(), 8, threads, [&](std::size_t, std::size_t begin, std::size_t end) {
        for (std::size_t n = begin; n < end; ++n)
            per_patch[n] = infer_patch(cache, reliable, dataset[n], config).log_evidence_trunc;
    });
    double total = 0.0;
    for (double v : per_patch) total += v;
    return total;
}

}  // namespace docclean
