#pragma once

// The translation-invariant patch model: class prior, uniform position prior,
// Bernoulli pattern mask and a Gaussian-or-background emission per cell, with
// the pattern placed by cyclic shift. Indices are 0-based throughout.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "docclean/background.hpp"
#include "docclean/common.hpp"
#include "docclean/features.hpp"

namespace docclean {

inline constexpr double kVarianceFloor = 1e-8;

/// Θ = (W, Φ, A, π). Per-cell arrays are laid out class-major then row-major
/// over the pattern; means and variances carry F contiguous entries per cell.
struct ModelParams {
    std::size_t num_classes = 0;
    GridShape patch_dims;
    GridShape pattern_dims;
    std::size_t feature_dim = 0;
    std::vector<double> pi;         // C
    std::vector<double> means;      // C * P1 * P2 * F
    std::vector<double> variances;  // C * P1 * P2 * F
    std::vector<double> masks;      // C * P1 * P2

    ModelParams() = default;
    ModelParams(std::size_t classes, GridShape patch, GridShape pattern, std::size_t features)
        : num_classes(classes),
          patch_dims(patch),
          pattern_dims(pattern),
          feature_dim(features),
          pi(classes, classes ? 1.0 / static_cast<double>(classes) : 0.0),
          means(classes * pattern.size() * features, 0.0),
          variances(classes * pattern.size() * features, 1.0),
          masks(classes * pattern.size(), 0.5) {
        if (classes < 1) throw std::invalid_argument("model needs at least one class");
        if (features < 1) throw std::invalid_argument("model needs at least one feature dimension");
        if (pattern.rows < 1 || pattern.cols < 1 || pattern.rows > patch.rows || pattern.cols > patch.cols)
            throw std::invalid_argument("pattern dims must be positive and no larger than the patch");
    }

    std::size_t pattern_cells() const { return pattern_dims.size(); }
    std::size_t positions() const { return patch_dims.size(); }

    std::size_t cell_index(std::size_t c, std::size_t i) const { return c * pattern_cells() + i; }
    double* mean(std::size_t c, std::size_t i) { return &means[cell_index(c, i) * feature_dim]; }
    const double* mean(std::size_t c, std::size_t i) const { return &means[cell_index(c, i) * feature_dim]; }
    double* variance(std::size_t c, std::size_t i) { return &variances[cell_index(c, i) * feature_dim]; }
    const double* variance(std::size_t c, std::size_t i) const { return &variances[cell_index(c, i) * feature_dim]; }
    double& mask(std::size_t c, std::size_t i) { return masks[cell_index(c, i)]; }
    double mask(std::size_t c, std::size_t i) const { return masks[cell_index(c, i)]; }

    double mean_mask(std::size_t c) const {
        double s = 0.0;
        for (std::size_t i = 0; i < pattern_cells(); ++i) s += mask(c, i);
        return s / static_cast<double>(pattern_cells());
    }

    void apply_variance_floor() {
        for (double& v : variances)
            if (!(v >= kVarianceFloor)) v = kVarianceFloor;
    }

    /// Checks every model invariant; throws std::invalid_argument on violation.
    void validate() const {
        const std::size_t P = pattern_cells();
        if (pi.size() != num_classes || masks.size() != num_classes * P ||
            means.size() != num_classes * P * feature_dim || variances.size() != means.size())
            throw std::invalid_argument("model arrays do not match the declared dimensions");
        if (pattern_dims.rows > patch_dims.rows || pattern_dims.cols > patch_dims.cols)
            throw std::invalid_argument("pattern larger than patch");
        double total = 0.0;
        for (double p : pi) {
            if (!(p > 0.0)) throw std::invalid_argument("mixing proportions must be positive");
            total += p;
        }
        if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("mixing proportions must sum to one");
        for (double a : masks)
            if (!(a >= 0.0 && a <= 1.0)) throw std::invalid_argument("mask parameters must lie in [0,1]");
        for (double v : variances)
            if (!(v > 0.0) || !std::isfinite(v)) throw std::invalid_argument("variances must be positive and finite");
        for (double w : means)
            if (!std::isfinite(w)) throw std::invalid_argument("means must be finite");
    }

    friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Patch cell hit by pattern cell `i` when the pattern sits at `x` (cyclic).
inline Position shift_cell(Position i, Position x, GridShape patch) {
    return {(i.row + x.row) % patch.rows, (i.col + x.col) % patch.cols};
}

/// Pattern cell landing on patch cell `d` for position `x`, if any.
inline std::optional<Position> unshift_cell(Position d, Position x, GridShape patch, GridShape pattern) {
    const Position i{wrap_index(static_cast<std::ptrdiff_t>(d.row) - static_cast<std::ptrdiff_t>(x.row), patch.rows),
                     wrap_index(static_cast<std::ptrdiff_t>(d.col) - static_cast<std::ptrdiff_t>(x.col), patch.cols)};
    if (i.row < pattern.rows && i.col < pattern.cols) return i;
    return std::nullopt;
}

/// log N(y; w, diag(var)).
inline double gaussian_log_density(const double* y, const double* w, const double* var, std::size_t F) {
    double acc = 0.0;
    for (std::size_t f = 0; f < F; ++f) {
        const double diff = y[f] - w[f];
        acc += std::log(var[f]) + diff * diff / var[f];
    }
    return -0.5 * (static_cast<double>(F) * kLog2Pi + acc);
}

struct LatentState {
    std::size_t class_index = 0;
    Position position;
    std::vector<std::uint8_t> mask;  // P1 * P2, row-major
};

/// log π_c + log(1 / (D1 D2)).
inline double log_prior(const ModelParams& params, std::size_t c, Position /*x*/) {
    return std::log(params.pi[c]) - std::log(static_cast<double>(params.positions()));
}

/// Feature vector of patch cell (row, col) gathered from the plane-major grid.
inline void gather_cell(const FeatureGrid& grid, std::size_t d, double* out) {
    for (std::size_t f = 0; f < grid.feature_dim; ++f) out[f] = grid.at(d, f);
}

/// Per pattern cell of (c, x): (log N(y; w, Φ), log H_B(y)) for the patch cell
/// the pattern cell lands on.
inline std::vector<std::pair<double, double>> cell_log_likes(const ModelParams& params, const BackgroundDensity& bg,
                                                             const FeatureGrid& patch, std::size_t c, Position x) {
    const GridShape P = params.pattern_dims, D = params.patch_dims;
    std::vector<std::pair<double, double>> out(P.size());
    std::vector<double> y(params.feature_dim);
    for (std::size_t r = 0; r < P.rows; ++r) {
        for (std::size_t q = 0; q < P.cols; ++q) {
            const std::size_t i = r * P.cols + q;
            const Position d = shift_cell({r, q}, x, D);
            gather_cell(patch, d.row * D.cols + d.col, y.data());
            out[i] = {gaussian_log_density(y.data(), params.mean(c, i), params.variance(c, i), params.feature_dim),
                      bg.log_density(y)};
        }
    }
    return out;
}

/// Draws a patch for fixed class and position; mask and features are random.
template <typename Rng>
std::pair<FeatureGrid, LatentState> sample_patch_at(const ModelParams& params, const BackgroundDensity& bg,
                                                    std::size_t c, Position x, Rng& rng) {
    bg.require_fitted();
    if (bg.feature_dim() != params.feature_dim) throw std::invalid_argument("background/model feature dims differ");
    const GridShape P = params.pattern_dims, D = params.patch_dims;
    LatentState latent{c, x, std::vector<std::uint8_t>(P.size(), 0)};
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (std::size_t i = 0; i < P.size(); ++i) latent.mask[i] = unit(rng) < params.mask(c, i) ? 1 : 0;
    FeatureGrid grid(D, params.feature_dim);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t r = 0; r < D.rows; ++r) {
        for (std::size_t q = 0; q < D.cols; ++q) {
            const auto i = unshift_cell({r, q}, x, D, P);
            const std::size_t pi_idx = i ? i->row * P.cols + i->col : 0;
            const bool foreground = i && latent.mask[pi_idx];
            for (std::size_t f = 0; f < params.feature_dim; ++f) {
                grid.at(r, q, f) = foreground ? params.mean(c, pi_idx)[f] +
                                                    std::sqrt(params.variance(c, pi_idx)[f]) * normal(rng)
                                              : bg.sample(f, rng);
            }
        }
    }
    return {std::move(grid), std::move(latent)};
}

/// Generative draw: c ~ π, x uniform over the patch, m ~ Bernoulli(A^c), then
/// foreground cells from the class Gaussians and everything else from H_B.
inline std::pair<FeatureGrid, LatentState> sample_patch(const ModelParams& params, const BackgroundDensity& bg,
                                                        std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::discrete_distribution<std::size_t> pick_class(params.pi.begin(), params.pi.end());
    std::uniform_int_distribution<std::size_t> row(0, params.patch_dims.rows - 1), col(0, params.patch_dims.cols - 1);
    const std::size_t c = pick_class(rng);
    const Position x{row(rng), col(rng)};
    return sample_patch_at(params, bg, c, x, rng);
}

}  // namespace docclean
