#pragma once

// Empirical background density: one independent 1-D histogram per feature
// dimension, fitted once over all patches and frozen afterwards.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "docclean/common.hpp"
#include "docclean/features.hpp"

namespace docclean {

inline constexpr std::size_t kDefaultBins = 64;
inline constexpr double kFloorFraction = 1e-6;

/// Histogram density for a single feature dimension on uniformly spaced bins.
struct HistogramDensity {
    std::vector<double> edges;      // bins + 1, strictly increasing
    std::vector<double> densities;  // per bin, integrates to one
    double floor_density = 0.0;     // used outside the range and for empty bins

    std::size_t bins() const { return densities.size(); }
    double lo() const { return edges.front(); }
    double hi() const { return edges.back(); }

    /// Bin containing y, or -1 when y lies outside [lo, hi].
    std::ptrdiff_t bin_of(double y) const {
        if (!(y >= lo() && y <= hi())) return -1;
        const double width = (hi() - lo()) / static_cast<double>(bins());
        auto b = static_cast<std::ptrdiff_t>((y - lo()) / width);
        b = std::clamp<std::ptrdiff_t>(b, 0, static_cast<std::ptrdiff_t>(bins()) - 1);
        // Settle rounding at bin boundaries against the stored edges.
        while (b > 0 && y < edges[static_cast<std::size_t>(b)]) --b;
        while (b + 1 < static_cast<std::ptrdiff_t>(bins()) && y >= edges[static_cast<std::size_t>(b) + 1]) ++b;
        return b;
    }

    double density(double y) const {
        const auto b = bin_of(y);
        if (b < 0) return floor_density;
        return std::max(densities[static_cast<std::size_t>(b)], floor_density);
    }

    friend bool operator==(const HistogramDensity&, const HistogramDensity&) = default;
};

/// H_B: product of per-dimension histogram densities.
class BackgroundDensity {
public:
    BackgroundDensity() = default;
    explicit BackgroundDensity(std::vector<HistogramDensity> dims) : dims_(std::move(dims)) { prepare(); }

    bool fitted() const { return !dims_.empty(); }
    std::size_t feature_dim() const { return dims_.size(); }
    const HistogramDensity& dimension(std::size_t f) const { return dims_[f]; }
    const std::vector<HistogramDensity>& dimensions() const { return dims_; }

    /// log H_B(y) = Σ_f log density_f(y_f).
    double log_density(std::span<const double> y) const {
        require_fitted();
        double acc = 0.0;
        for (std::size_t f = 0; f < dims_.size(); ++f) acc += log_density(f, y[f]);
        return acc;
    }

    double log_density(std::size_t f, double y) const {
        const auto b = dims_[f].bin_of(y);
        return b < 0 ? log_floor_[f] : log_bins_[f][static_cast<std::size_t>(b)];
    }

    /// log H_B at every cell of a grid, row-major.
    std::vector<double> log_density_plane(const FeatureGrid& grid) const {
        require_fitted();
        if (grid.feature_dim != dims_.size())
            throw std::invalid_argument("feature dimension does not match the background density");
        std::vector<double> out(grid.cells(), 0.0);
        for (std::size_t f = 0; f < dims_.size(); ++f) {
            const auto plane = grid.plane(f);
            for (std::size_t d = 0; d < out.size(); ++d) out[d] += log_density(f, plane[d]);
        }
        return out;
    }

    /// Centre of the highest-density bin per dimension.
    std::vector<double> mode() const {
        require_fitted();
        std::vector<double> out;
        for (const auto& h : dims_) {
            const auto it = std::max_element(h.densities.begin(), h.densities.end());
            const auto b = static_cast<std::size_t>(it - h.densities.begin());
            out.push_back(0.5 * (h.edges[b] + h.edges[b + 1]));
        }
        return out;
    }

    /// Inverse-CDF draw: pick a bin by its mass, then a uniform point inside it.
    template <typename Rng>
    double sample(std::size_t f, Rng& rng) const {
        require_fitted();
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        const auto& cdf = cdf_[f];
        const double u = unit(rng);
        auto b = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
        b = std::min(b, cdf.size() - 1);
        while (b > 0 && dims_[f].densities[b] == 0.0) --b;
        const double lo = dims_[f].edges[b], hi = dims_[f].edges[b + 1];
        return lo + unit(rng) * (hi - lo);
    }

    void require_fitted() const {
        if (!fitted()) throw InvalidState("background density has not been fitted");
    }

    friend bool operator==(const BackgroundDensity& a, const BackgroundDensity& b) { return a.dims_ == b.dims_; }

private:
    void prepare() {
        log_bins_.clear();
        log_floor_.clear();
        cdf_.clear();
        for (const auto& h : dims_) {
            if (h.bins() < 1 || h.edges.size() != h.bins() + 1)
                throw std::invalid_argument("histogram edges must have one more entry than bins");
            for (std::size_t b = 0; b + 1 < h.edges.size(); ++b)
                if (!(h.edges[b] < h.edges[b + 1])) throw std::invalid_argument("histogram edges must be strictly increasing");
            if (!(h.floor_density > 0.0)) throw std::invalid_argument("floor density must be positive");
            std::vector<double> lb(h.bins()), cdf(h.bins());
            double acc = 0.0;
            for (std::size_t b = 0; b < h.bins(); ++b) {
                if (!(h.densities[b] >= 0.0)) throw std::invalid_argument("histogram densities must be non-negative");
                lb[b] = std::log(std::max(h.densities[b], h.floor_density));
                acc += h.densities[b] * (h.edges[b + 1] - h.edges[b]);
                cdf[b] = acc;
            }
            for (double& v : cdf) v /= acc;
            log_bins_.push_back(std::move(lb));
            log_floor_.push_back(std::log(h.floor_density));
            cdf_.push_back(std::move(cdf));
        }
    }

    std::vector<HistogramDensity> dims_;
    std::vector<std::vector<double>> log_bins_;
    std::vector<double> log_floor_;
    std::vector<std::vector<double>> cdf_;
};

/// Fits a normalized histogram per feature dimension over every cell of every
/// grid. The range of each dimension is the observed [min, max]; a dimension
/// with a single observed value gets the unit range centred on it.
inline BackgroundDensity fit_background(std::span<const FeatureGrid> dataset, std::size_t num_bins = kDefaultBins) {
    if (dataset.empty()) throw std::invalid_argument("cannot fit a background density to an empty dataset");
    if (num_bins < 2) throw std::invalid_argument("background histogram needs at least 2 bins");
    const std::size_t F = dataset.front().feature_dim;
    std::vector<double> lo(F, std::numeric_limits<double>::infinity()), hi(F, -std::numeric_limits<double>::infinity());
    std::size_t total = 0;
    for (const auto& g : dataset) {
        if (g.feature_dim != F) throw std::invalid_argument("all grids must share one feature dimension");
        for (std::size_t f = 0; f < F; ++f) {
            for (double v : g.plane(f)) {
                if (!std::isfinite(v)) throw std::invalid_argument("feature values must be finite");
                lo[f] = std::min(lo[f], v);
                hi[f] = std::max(hi[f], v);
            }
        }
        total += g.cells();
    }
    std::vector<HistogramDensity> dims(F);
    for (std::size_t f = 0; f < F; ++f) {
        double a = lo[f], b = hi[f];
        if (!(b > a)) {
            a -= 0.5;
            b += 0.5;
        }
        auto& h = dims[f];
        h.edges.resize(num_bins + 1);
        for (std::size_t k = 0; k <= num_bins; ++k)
            h.edges[k] = a + (b - a) * static_cast<double>(k) / static_cast<double>(num_bins);
        h.edges.back() = b;
        h.densities.assign(num_bins, 0.0);
        h.floor_density = kFloorFraction / (b - a);
    }
    std::vector<std::vector<std::size_t>> counts(F, std::vector<std::size_t>(num_bins, 0));
    for (const auto& g : dataset)
        for (std::size_t f = 0; f < F; ++f)
            for (double v : g.plane(f)) ++counts[f][static_cast<std::size_t>(dims[f].bin_of(v))];
    for (std::size_t f = 0; f < F; ++f) {
        auto& h = dims[f];
        for (std::size_t k = 0; k < num_bins; ++k)
            h.densities[k] = static_cast<double>(counts[f][k]) / (static_cast<double>(total) * (h.edges[k + 1] - h.edges[k]));
    }
    return BackgroundDensity(std::move(dims));
}

inline double eval_background(const BackgroundDensity& bg, std::span<const double> y) { return bg.log_density(y); }

}  // namespace docclean
