#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "docclean/common.hpp"

namespace docclean {

/// Row-major image with interleaved channels, intensities in [0,1].
/// `origin_*` records where the raster was cut from when it is a patch of a
/// larger page; pages themselves have origin (0,0).
struct PageRaster {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t channels = 1;
    std::vector<double> data;
    std::size_t origin_row = 0;
    std::size_t origin_col = 0;

    PageRaster() = default;
    PageRaster(std::size_t w, std::size_t h, std::size_t ch, double fill = 0.0)
        : width(w), height(h), channels(ch), data(w * h * ch, fill) {}

    double& at(std::size_t row, std::size_t col, std::size_t ch = 0) {
        return data[(row * width + col) * channels + ch];
    }
    double at(std::size_t row, std::size_t col, std::size_t ch = 0) const {
        return data[(row * width + col) * channels + ch];
    }

    /// Luminance for color rasters, the raw value for grayscale.
    double gray(std::size_t row, std::size_t col) const {
        const double* px = &data[(row * width + col) * channels];
        if (channels == 1) return px[0];
        return 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
    }

    void validate() const {
        if (channels != 1 && channels != 3)
            throw std::invalid_argument("raster must have 1 or 3 channels, got " + std::to_string(channels));
        if (data.size() != width * height * channels)
            throw std::invalid_argument("raster data size does not match its dimensions");
        for (double v : data)
            if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("raster values must lie in [0,1]");
    }

    friend bool operator==(const PageRaster&, const PageRaster&) = default;
};

/// Axis-aligned pixel rectangle on a page.
struct PixelBox {
    std::ptrdiff_t row = 0;
    std::ptrdiff_t col = 0;
    std::size_t height = 0;
    std::size_t width = 0;

    std::size_t area() const { return height * width; }

    std::size_t intersection_area(const PixelBox& o) const {
        const auto r0 = std::max(row, o.row);
        const auto c0 = std::max(col, o.col);
        const auto r1 = std::min(row + static_cast<std::ptrdiff_t>(height), o.row + static_cast<std::ptrdiff_t>(o.height));
        const auto c1 = std::min(col + static_cast<std::ptrdiff_t>(width), o.col + static_cast<std::ptrdiff_t>(o.width));
        if (r1 <= r0 || c1 <= c0) return 0;
        return static_cast<std::size_t>((r1 - r0) * (c1 - c0));
    }

    friend bool operator==(const PixelBox&, const PixelBox&) = default;
};

}  // namespace docclean
