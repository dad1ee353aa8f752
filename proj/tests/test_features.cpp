#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "docclean/features.hpp"

using namespace docclean;

namespace {

PageRaster random_page(std::size_t w, std::size_t h, std::size_t ch, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    PageRaster p(w, h, ch);
    for (double& v : p.data) v = u(rng);
    return p;
}

// Response of one complex kernel at patch pixel (r, c), by direct 2-D
// correlation over the reflect-padded luminance.
double direct_magnitude(const PageRaster& patch, const GaborBank& bank, std::size_t filt, std::size_t r, std::size_t c) {
    const std::size_t k = bank.config().kernel_size;
    const auto half = static_cast<std::ptrdiff_t>(k / 2);
    double re = 0.0, im = 0.0;
    for (std::size_t y = 0; y < k; ++y)
        for (std::size_t x = 0; x < k; ++x) {
            const auto sy = reflect_index(static_cast<std::ptrdiff_t>(r + y) - half, patch.height);
            const auto sx = reflect_index(static_cast<std::ptrdiff_t>(c + x) - half, patch.width);
            re += bank.real_kernel(filt)[y * k + x] * patch.gray(sy, sx);
            im += bank.imag_kernel(filt)[y * k + x] * patch.gray(sy, sx);
        }
    return std::hypot(re, im);
}

}  // namespace

TEST(ExtractPatches, ExactTiling) {
    const auto page = random_page(100, 100, 1, 1);
    const auto patches = extract_patches(page, {50, 50}, {50, 50});
    ASSERT_EQ(patches.size(), 4u);
    const std::size_t origins[4][2] = {{0, 0}, {0, 50}, {50, 0}, {50, 50}};
    for (std::size_t k = 0; k < 4; ++k) {
        EXPECT_EQ(patches[k].origin_row, origins[k][0]);
        EXPECT_EQ(patches[k].origin_col, origins[k][1]);
        EXPECT_EQ(patches[k].at(7, 9), page.at(origins[k][0] + 7, origins[k][1] + 9));
    }
}

TEST(ExtractPatches, ScanSizedPageCount) {
    // Width 3307, height 4677; a 120x165 (rows x cols) patch on the pattern-size grid.
    PageRaster page(3307, 4677, 1, 0.5);
    const GridShape stride{90, 120};
    const auto patches = extract_patches(page, {120, 165}, stride);
    const std::size_t expected = ((4677 - 120) / 90 + 1) * ((3307 - 165) / 120 + 1);
    EXPECT_EQ(patches.size(), expected);
    EXPECT_EQ(patches.back().origin_row + 120 <= 4677, true);
}

TEST(ExtractPatches, PatchEqualsPage) {
    const auto page = random_page(165, 120, 1, 2);
    for (std::size_t s : {1u, 7u, 500u}) {
        const auto patches = extract_patches(page, {120, 165}, {s, s});
        ASSERT_EQ(patches.size(), 1u);
        EXPECT_EQ(patches[0].data, page.data);
    }
}

TEST(ExtractPatches, Errors) {
    const auto page = random_page(10, 10, 1, 3);
    EXPECT_THROW(extract_patches(page, {11, 5}, {1, 1}), std::invalid_argument);
    EXPECT_THROW(extract_patches(page, {5, 5}, {0, 1}), std::invalid_argument);
}

TEST(ExtractPatches, Deterministic) {
    const auto page = random_page(64, 48, 3, 4);
    const auto a = extract_patches(page, {20, 16}, {7, 5});
    const auto b = extract_patches(page, {20, 16}, {7, 5});
    EXPECT_EQ(a, b);
}

TEST(ColorFeatures, Identity) {
    const auto rgb = random_page(50, 50, 3, 5);
    const auto g = color_features(rgb);
    EXPECT_EQ(g.dims, (GridShape{50, 50}));
    EXPECT_EQ(g.feature_dim, 3u);
    EXPECT_EQ(g.cell_stride, 1u);
    for (std::size_t r = 0; r < 50; r += 7)
        for (std::size_t c = 0; c < 50; c += 3)
            for (std::size_t f = 0; f < 3; ++f) EXPECT_EQ(g.at(r, c, f), rgb.at(r, c, f));

    PageRaster zero(6, 6, 3, 0.0);
    for (double v : color_features(zero).values) EXPECT_EQ(v, 0.0);

    const auto gray = random_page(4, 4, 1, 6);
    const auto g1 = color_features(gray);
    EXPECT_EQ(g1.dims, (GridShape{4, 4}));
    EXPECT_EQ(g1.values, gray.data);
}

TEST(GaborFeatures, ScanPatchGeometry) {
    const auto patch = random_page(165, 120, 1, 7);
    const GaborBankConfig cfg;  // 8 orientations x 5 scales
    EXPECT_EQ(cfg.feature_dim(), 40u);
    const auto g = gabor_features(patch, cfg, 3);
    EXPECT_EQ(g.dims, (GridShape{40, 55}));
    EXPECT_EQ(g.feature_dim, 40u);
    for (double v : g.values) EXPECT_TRUE(std::isfinite(v));
    GaborBankConfig real = cfg;
    real.response = GaborResponse::real;
    EXPECT_EQ(real.feature_dim(), 80u);
}

TEST(GaborFeatures, ConstantPatchIsSilent) {
    const GaborBank bank(GaborBankConfig{});
    for (double level : {0.0, 0.3, 1.0}) {
        PageRaster patch(40, 40, 1, level);
        const auto g = gabor_features(patch, bank, 3);
        // Gain of a unit-norm kernel on a unit-amplitude input is at most sqrt(k^2).
        const double max_gain = static_cast<double>(bank.config().kernel_size);
        for (double v : g.values) EXPECT_LT(std::abs(v), 1e-6 * max_gain);
    }
}

TEST(GaborFeatures, VerticalEdgeSelectsMatchingOrientation) {
    GaborBankConfig cfg;
    const GaborBank bank(cfg);
    PageRaster patch(41, 41, 1, 0.0);
    for (std::size_t r = 0; r < 41; ++r)
        for (std::size_t c = 20; c < 41; ++c) patch.at(r, c) = 1.0;
    const auto g = gabor_features(patch, bank, 1);
    for (std::size_t s = 0; s < cfg.num_scales; ++s) {
        std::size_t best_lib = 0, best_oracle = 0;
        double vlib = -1, voracle = -1;
        for (std::size_t o = 0; o < cfg.num_orientations; ++o) {
            const std::size_t f = bank.filter_index(s, o);
            const double lib = g.at(20, 20, f);
            const double ref = direct_magnitude(patch, bank, f, 20, 20);
            EXPECT_NEAR(lib, ref, 1e-12);
            if (lib > vlib) vlib = lib, best_lib = o;
            if (ref > voracle) voracle = ref, best_oracle = o;
        }
        EXPECT_EQ(best_lib, best_oracle);
        EXPECT_EQ(best_lib, 0u) << "scale " << s;  // wave vector across the edge
    }
}

TEST(GaborFeatures, MatchesDirectConvolutionEverywhere) {
    const auto patch = random_page(23, 19, 3, 8);
    GaborBankConfig cfg{3, 2, 7, 2.5, GaborResponse::magnitude};
    const GaborBank bank(cfg);
    const auto g = gabor_features(patch, bank, 2);
    for (std::size_t r = 0; r < g.dims.rows; ++r)
        for (std::size_t c = 0; c < g.dims.cols; ++c)
            for (std::size_t f = 0; f < bank.num_filters(); ++f)
                EXPECT_NEAR(g.at(r, c, f), direct_magnitude(patch, bank, f, 2 * r, 2 * c), 1e-12);
}

TEST(GaborFeatures, TranslationCovariance) {
    const std::size_t sub = 3;
    const auto big = random_page(60, 60, 1, 9);
    GaborBankConfig cfg{4, 2, 9, 3.0, GaborResponse::real};
    const GaborBank bank(cfg);
    PageRaster a(48, 48, 1), b(48, 48, 1);
    for (std::size_t r = 0; r < 48; ++r)
        for (std::size_t c = 0; c < 48; ++c) {
            a.at(r, c) = big.at(r + sub, c + sub);
            b.at(r, c) = big.at(r, c);
        }
    const auto ga = gabor_features(a, bank, sub);
    const auto gb = gabor_features(b, bank, sub);
    const std::size_t margin = (cfg.kernel_size / 2 + sub - 1) / sub + 1;
    for (std::size_t r = margin; r + margin + 1 < ga.dims.rows; ++r)
        for (std::size_t c = margin; c + margin + 1 < ga.dims.cols; ++c)
            for (std::size_t f = 0; f < ga.feature_dim; ++f) EXPECT_NEAR(ga.at(r, c, f), gb.at(r + 1, c + 1, f), 1e-9);
}

TEST(GaborFeatures, Errors) {
    PageRaster patch(8, 8, 1, 0.5);
    EXPECT_THROW(gabor_features(patch, GaborBankConfig{}, 1), std::invalid_argument);  // 21 > 8
    EXPECT_THROW(gabor_features(patch, GaborBankConfig{2, 1, 5, 3.0, GaborResponse::magnitude}, 0), std::invalid_argument);
}

TEST(GaborBank, KernelsAreDcFreeAndUnitNorm) {
    const GaborBank bank(GaborBankConfig{});
    const std::size_t k2 = bank.config().kernel_size * bank.config().kernel_size;
    for (std::size_t f = 0; f < bank.num_filters(); ++f) {
        double sum = 0.0, norm = 0.0;
        for (std::size_t j = 0; j < k2; ++j) {
            sum += bank.real_kernel(f)[j] + bank.imag_kernel(f)[j];
            norm += bank.real_kernel(f)[j] * bank.real_kernel(f)[j] + bank.imag_kernel(f)[j] * bank.imag_kernel(f)[j];
        }
        EXPECT_NEAR(sum, 0.0, 1e-9);
        EXPECT_NEAR(norm, 1.0, 1e-9);
    }
}

TEST(PageFeatures, ThreadCountInvariant) {
    const auto page = random_page(90, 80, 1, 10);
    FeaturePipeline pipe;
    pipe.patch_size = {30, 28};
    pipe.subsample = 2;
    pipe.gabor = {4, 2, 9, 3.0, GaborResponse::magnitude};
    const auto one = page_features(page, pipe, {10, 12}, 1);
    const auto four = page_features(page, pipe, {10, 12}, 4);
    EXPECT_EQ(one, four);
    EXPECT_EQ(one.front().origin_col, 0u);
    EXPECT_EQ(one[1].origin_col, 12u);
    // Zero stride resolves to half the pattern extent in pixels.
    EXPECT_EQ(pipe.effective_stride({8, 6}), (GridShape{8, 6}));
    pipe.stride = {10, 12};
    EXPECT_EQ(pipe.effective_stride({8, 6}), (GridShape{10, 12}));
}
