#pragma once

// Patch cutting and per-pixel feature transforms (identity/color and a Gabor
// filter bank sampled on a subgrid).

#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "docclean/common.hpp"
#include "docclean/raster.hpp"

namespace docclean {

/// D1 x D2 grid of F-dimensional feature vectors (one data point).
/// Storage is plane-major: all cells of feature 0, then feature 1, ...
struct FeatureGrid {
    GridShape dims;
    std::size_t feature_dim = 0;
    std::vector<double> values;
    std::size_t origin_row = 0;  // pixel offset of cell (0,0) in the source page
    std::size_t origin_col = 0;
    std::size_t cell_stride = 1;  // pixels per grid step

    FeatureGrid() = default;
    FeatureGrid(GridShape d, std::size_t f) : dims(d), feature_dim(f), values(d.size() * f, 0.0) {}

    std::size_t cells() const { return dims.size(); }
    double& at(std::size_t row, std::size_t col, std::size_t f) { return values[(f * dims.rows + row) * dims.cols + col]; }
    double at(std::size_t row, std::size_t col, std::size_t f) const { return values[(f * dims.rows + row) * dims.cols + col]; }
    /// Feature f of the cell with flat row-major index d.
    double at(std::size_t d, std::size_t f) const { return values[f * dims.size() + d]; }
    std::span<const double> plane(std::size_t f) const { return {values.data() + f * cells(), cells()}; }

    friend bool operator==(const FeatureGrid&, const FeatureGrid&) = default;
};

/// Cuts every patch that fits entirely inside the page at positions
/// (r*stride.rows, c*stride.cols), in row-major order.
inline std::vector<PageRaster> extract_patches(const PageRaster& page, GridShape patch_size, GridShape stride) {
    if (stride.rows < 1 || stride.cols < 1) throw std::invalid_argument("patch stride must be >= 1 in both axes");
    if (patch_size.rows < 1 || patch_size.cols < 1) throw std::invalid_argument("patch size must be positive");
    if (patch_size.rows > page.height || patch_size.cols > page.width)
        throw std::invalid_argument("patch " + std::to_string(patch_size.rows) + "x" + std::to_string(patch_size.cols) +
                                    " is larger than the page " + std::to_string(page.height) + "x" +
                                    std::to_string(page.width));
    std::vector<PageRaster> patches;
    const std::size_t ch = page.channels;
    for (std::size_t r = 0; r + patch_size.rows <= page.height; r += stride.rows) {
        for (std::size_t c = 0; c + patch_size.cols <= page.width; c += stride.cols) {
            PageRaster p(patch_size.cols, patch_size.rows, ch);
            p.origin_row = page.origin_row + r;
            p.origin_col = page.origin_col + c;
            for (std::size_t y = 0; y < patch_size.rows; ++y) {
                const double* src = &page.data[((r + y) * page.width + c) * ch];
                std::copy(src, src + patch_size.cols * ch, &p.data[y * patch_size.cols * ch]);
            }
            patches.push_back(std::move(p));
        }
    }
    return patches;
}

/// Identity transform: each pixel's channel values become its feature vector.
inline FeatureGrid color_features(const PageRaster& patch) {
    if (patch.channels != 1 && patch.channels != 3)
        throw std::invalid_argument("color features need 1 or 3 channels");
    FeatureGrid grid({patch.height, patch.width}, patch.channels);
    grid.origin_row = patch.origin_row;
    grid.origin_col = patch.origin_col;
    grid.cell_stride = 1;
    for (std::size_t r = 0; r < patch.height; ++r)
        for (std::size_t c = 0; c < patch.width; ++c)
            for (std::size_t f = 0; f < patch.channels; ++f) grid.at(r, c, f) = patch.at(r, c, f);
    return grid;
}

enum class GaborResponse {
    magnitude,  // |response| per filter
    real,       // real and imaginary parts as two entries per filter
};

struct GaborBankConfig {
    std::size_t num_orientations = 8;
    std::size_t num_scales = 5;
    std::size_t kernel_size = 21;  // odd, pixels
    double wavelength_base = 3.0;  // wavelength of the finest scale, pixels
    GaborResponse response = GaborResponse::magnitude;

    std::size_t feature_dim() const {
        return num_orientations * num_scales * (response == GaborResponse::magnitude ? 1 : 2);
    }
};

/// Complex Gabor kernels. Orientation k has its carrier wave vector at angle
/// k*pi/O from the column axis, so orientation 0 has vertical stripes and
/// responds most strongly to vertical edges. Scale s has wavelength
/// base * sqrt(2)^s and envelope sigma = wavelength / 2. The real part is made
/// zero-mean and each complex kernel has unit L2 norm.
class GaborBank {
public:
    explicit GaborBank(GaborBankConfig config) : config_(config) {
        if (config_.num_orientations < 1 || config_.num_scales < 1)
            throw std::invalid_argument("gabor bank needs at least one orientation and one scale");
        if (config_.kernel_size < 1 || config_.kernel_size % 2 == 0)
            throw std::invalid_argument("gabor kernel size must be odd and positive");
        if (!(config_.wavelength_base > 0.0)) throw std::invalid_argument("gabor wavelength must be positive");
        const std::size_t k = config_.kernel_size;
        const double half = static_cast<double>(k / 2);
        for (std::size_t s = 0; s < config_.num_scales; ++s) {
            const double wavelength = config_.wavelength_base * std::pow(std::numbers::sqrt2, static_cast<double>(s));
            const double sigma = wavelength / 2.0;
            for (std::size_t o = 0; o < config_.num_orientations; ++o) {
                const double theta = std::numbers::pi * static_cast<double>(o) / static_cast<double>(config_.num_orientations);
                const double kx = std::cos(theta), ky = std::sin(theta);
                std::vector<double> re(k * k), im(k * k), env(k * k);
                double env_sum = 0.0, re_sum = 0.0;
                for (std::size_t y = 0; y < k; ++y) {
                    for (std::size_t x = 0; x < k; ++x) {
                        const double dy = static_cast<double>(y) - half, dx = static_cast<double>(x) - half;
                        const double e = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
                        const double phase = 2.0 * std::numbers::pi * (dx * kx + dy * ky) / wavelength;
                        env[y * k + x] = e;
                        re[y * k + x] = e * std::cos(phase);
                        im[y * k + x] = e * std::sin(phase);
                        env_sum += e;
                        re_sum += re[y * k + x];
                    }
                }
                const double dc = re_sum / env_sum;
                double norm = 0.0;
                for (std::size_t j = 0; j < k * k; ++j) {
                    re[j] -= dc * env[j];
                    norm += re[j] * re[j] + im[j] * im[j];
                }
                norm = std::sqrt(norm);
                for (std::size_t j = 0; j < k * k; ++j) {
                    re[j] /= norm;
                    im[j] /= norm;
                }
                // Antisymmetric part sums to zero analytically; remove rounding residue.
                double im_sum = 0.0;
                for (double v : im) im_sum += v;
                im_sum /= static_cast<double>(k * k);
                for (double& v : im) v -= im_sum;
                real_.push_back(std::move(re));
                imag_.push_back(std::move(im));
            }
        }
    }

    const GaborBankConfig& config() const { return config_; }
    std::size_t num_filters() const { return real_.size(); }
    /// Filter index for (scale, orientation).
    std::size_t filter_index(std::size_t scale, std::size_t orientation) const {
        return scale * config_.num_orientations + orientation;
    }
    std::span<const double> real_kernel(std::size_t filter) const { return real_[filter]; }
    std::span<const double> imag_kernel(std::size_t filter) const { return imag_[filter]; }

private:
    GaborBankConfig config_;
    std::vector<std::vector<double>> real_;
    std::vector<std::vector<double>> imag_;
};

/// Symmetric reflection (d c b a | a b c d | d c b a) for one out-of-range step.
inline std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
    const auto m = static_cast<std::ptrdiff_t>(n);
    if (i < 0) i = -i - 1;
    if (i >= m) i = 2 * m - i - 1;
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i, 0, m - 1));
}

/// Gabor responses at every `subsample`-th pixel (cells centred on pixels
/// (r*subsample, c*subsample)), with reflective padding at the patch border.
inline FeatureGrid gabor_features(const PageRaster& patch, const GaborBank& bank, std::size_t subsample) {
    if (subsample < 1) throw std::invalid_argument("subsample must be >= 1");
    const std::size_t k = bank.config().kernel_size;
    if (k > patch.height || k > patch.width)
        throw std::invalid_argument("gabor kernel (" + std::to_string(k) + ") is larger than the patch");
    const GridShape dims{patch.height / subsample, patch.width / subsample};
    if (dims.rows == 0 || dims.cols == 0) throw std::invalid_argument("subsample larger than the patch");
    const bool magnitude = bank.config().response == GaborResponse::magnitude;
    FeatureGrid grid(dims, bank.config().feature_dim());
    grid.origin_row = patch.origin_row;
    grid.origin_col = patch.origin_col;
    grid.cell_stride = subsample;

    // Padded luminance image so the inner loop has no branches.
    const std::size_t half = k / 2;
    const std::size_t pw = patch.width + 2 * half, ph = patch.height + 2 * half;
    std::vector<double> padded(pw * ph);
    for (std::size_t y = 0; y < ph; ++y) {
        const std::size_t sy = reflect_index(static_cast<std::ptrdiff_t>(y) - static_cast<std::ptrdiff_t>(half), patch.height);
        for (std::size_t x = 0; x < pw; ++x) {
            const std::size_t sx = reflect_index(static_cast<std::ptrdiff_t>(x) - static_cast<std::ptrdiff_t>(half), patch.width);
            padded[y * pw + x] = patch.gray(sy, sx);
        }
    }

    std::vector<double> window(k * k);
    for (std::size_t r = 0; r < dims.rows; ++r) {
        for (std::size_t c = 0; c < dims.cols; ++c) {
            const std::size_t py = r * subsample, px = c * subsample;  // top-left of window in padded coords
            for (std::size_t y = 0; y < k; ++y)
                std::copy_n(&padded[(py + y) * pw + px], k, &window[y * k]);
            for (std::size_t filt = 0; filt < bank.num_filters(); ++filt) {
                const auto re = bank.real_kernel(filt);
                const auto im = bank.imag_kernel(filt);
                double sr = 0.0, si = 0.0;
                for (std::size_t j = 0; j < k * k; ++j) {
                    sr += re[j] * window[j];
                    si += im[j] * window[j];
                }
                if (magnitude) {
                    grid.at(r, c, filt) = std::sqrt(sr * sr + si * si);
                } else {
                    grid.at(r, c, 2 * filt) = sr;
                    grid.at(r, c, 2 * filt + 1) = si;
                }
            }
        }
    }
    return grid;
}

inline FeatureGrid gabor_features(const PageRaster& patch, const GaborBankConfig& config, std::size_t subsample) {
    return gabor_features(patch, GaborBank(config), subsample);
}

enum class FeatureKind { color, gabor };

/// Everything needed to turn a page into a dataset of feature grids.
struct FeaturePipeline {
    FeatureKind kind = FeatureKind::gabor;
    GridShape patch_size{120, 165};  // pixels
    GridShape stride{0, 0};          // pixels; zero means "half the pattern size"
    GaborBankConfig gabor{};
    std::size_t subsample = 3;

    std::size_t cell_stride() const { return kind == FeatureKind::color ? 1 : subsample; }

    /// Grid dimensions produced for one patch.
    GridShape grid_dims() const {
        if (kind == FeatureKind::color) return patch_size;
        return {patch_size.rows / subsample, patch_size.cols / subsample};
    }

    /// Resolves a zero stride to half the pattern extent in pixels (at least 1).
    GridShape effective_stride(GridShape pattern_cells) const {
        if (stride.rows > 0 && stride.cols > 0) return stride;
        const std::size_t cs = cell_stride();
        return {std::max<std::size_t>(1, pattern_cells.rows * cs / 2), std::max<std::size_t>(1, pattern_cells.cols * cs / 2)};
    }
};

/// Feature transform for one patch under a pipeline. Reuses `bank` when given.
inline FeatureGrid patch_features(const PageRaster& patch, const FeaturePipeline& pipe, const GaborBank* bank = nullptr) {
    if (pipe.kind == FeatureKind::color) return color_features(patch);
    if (bank) return gabor_features(patch, *bank, pipe.subsample);
    return gabor_features(patch, pipe.gabor, pipe.subsample);
}

/// Cuts the page on the pipeline's grid and transforms every patch.
inline std::vector<FeatureGrid> page_features(const PageRaster& page, const FeaturePipeline& pipe, GridShape stride,
                                              unsigned threads = 1) {
    const auto patches = extract_patches(page, pipe.patch_size, stride);
    std::vector<FeatureGrid> grids(patches.size());
    std::optional<GaborBank> bank;
    if (pipe.kind == FeatureKind::gabor) bank.emplace(pipe.gabor);
    parallel_blocks(patches.size(), 16, threads, [&](std::size_t, std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) grids[i] = patch_features(patches[i], pipe, bank ? &*bank : nullptr);
    });
    return grids;
}

}  // namespace docclean
