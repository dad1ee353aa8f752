#pragma once

// MAP match of a patch against a trained model and the mask-agreement quality
// of that match.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "docclean/inference.hpp"

namespace docclean {

inline constexpr double kDefaultGamma = 10.0;

struct Match {
    std::size_t class_index = 0;
    Position position;
    double quality = 0.0;
    bool fully_visible = false;  // pattern box inside the patch without cyclic wrap
};

inline bool pattern_fully_visible(Position x, GridShape pattern, GridShape patch) {
    return x.row + pattern.rows <= patch.rows && x.col + pattern.cols <= patch.cols;
}

/// Index of the highest q; ties go to the lower class, then the lower position.
inline std::size_t map_index(const PosteriorSummary& post) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < post.states.size(); ++k) {
        const auto& a = post.states[k];
        const auto& b = post.states[best];
        if (post.q[k] > post.q[best] ||
            (post.q[k] == post.q[best] &&
             (a.class_index < b.class_index || (a.class_index == b.class_index && a.position < b.position))))
            best = k;
    }
    return best;
}

/// 1 - Σ α^γ (α - p)^2 / Σ α^γ over the pattern cells of class c; 0 when every
/// weight vanishes.
inline double quality_from_posterior(const ModelParams& params, std::size_t c, std::span<const double> mask_post,
                                     double gamma = kDefaultGamma) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < params.pattern_cells(); ++i) {
        const double a = params.mask(c, i);
        const double w = std::pow(a, gamma);
        num += w * (a - mask_post[i]) * (a - mask_post[i]);
        den += w;
    }
    if (!(den > 0.0)) return 0.0;
    return std::clamp(1.0 - num / den, 0.0, 1.0);
}

/// Match together with the quality of the matched state, reusing the mask
/// posteriors of the truncated E-step.
inline Match match_patch(const ModelCache& cache, const std::vector<std::vector<std::size_t>>& reliable,
                         const FeatureGrid& patch, const SelectionConfig& selection, double gamma = kDefaultGamma) {
    const auto& params = cache.params();
    const auto post = infer_patch(cache, reliable, patch, selection);
    const std::size_t k = map_index(post);
    Match m;
    m.class_index = post.states[k].class_index;
    m.position = post.states[k].position;
    m.fully_visible = pattern_fully_visible(m.position, params.pattern_dims, params.patch_dims);
    m.quality = quality_from_posterior(params, m.class_index, post.mask_posterior(k, params.pattern_cells()), gamma);
    return m;
}

/// MAP (c*, x*) over the candidate set; quality is left at zero.
inline Match map_match(const ModelParams& params, const BackgroundDensity& bg, const FeatureGrid& patch,
                       const SelectionConfig& selection) {
    const auto post = infer_patch(params, bg, patch, selection);
    const std::size_t k = map_index(post);
    Match m;
    m.class_index = post.states[k].class_index;
    m.position = post.states[k].position;
    m.fully_visible = pattern_fully_visible(m.position, params.pattern_dims, params.patch_dims);
    return m;
}

inline double match_quality(const ModelParams& params, const BackgroundDensity& bg, const FeatureGrid& patch,
                            const Match& match, double gamma = kDefaultGamma) {
    const auto post = mask_posterior(params, bg, patch, match.class_index, match.position);
    return quality_from_posterior(params, match.class_index, post, gamma);
}

}  // namespace docclean
