#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "docclean/cleaning.hpp"
#include "docclean/synthgen.hpp"

using namespace docclean;

namespace {

constexpr double kPaper = 0.95, kInk = 0.05;

void stamp(PageRaster& page, const Glyph& g, std::size_t r0, std::size_t c0) {
    for (std::size_t r = 0; r < g.height; ++r)
        for (std::size_t c = 0; c < g.width; ++c)
            page.at(r0 + r, c0 + c) = std::min(page.at(r0 + r, c0 + c), kPaper - g.at(r, c) * (kPaper - kInk));
}

// Pixel-space model whose classes are the first `C` built-in glyphs.
struct Setup {
    ModelParams params;
    BackgroundDensity bg;
    FeaturePipeline pipe;
    std::vector<Glyph> glyphs = builtin_glyphs();
};

Setup make_setup(const PageRaster& page, GridShape patch, GridShape stride, std::size_t C = 2) {
    Setup s;
    s.pipe.kind = FeatureKind::color;
    s.pipe.patch_size = patch;
    s.pipe.stride = stride;
    const auto& g0 = s.glyphs[0];
    s.params = ModelParams(C, patch, {g0.height, g0.width}, 1);
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < g0.height * g0.width; ++i) {
            const double cov = s.glyphs[c].coverage[i];
            s.params.mask(c, i) = cov >= 0.5 ? 0.95 : 0.05;
            s.params.mean(c, i)[0] = kPaper - cov * (kPaper - kInk);
            s.params.variance(c, i)[0] = 1e-4;
        }
    std::vector<FeatureGrid> grids;
    for (const auto& p : extract_patches(page, patch, s.pipe.effective_stride(s.params.pattern_dims)))
        grids.push_back(color_features(p));
    s.bg = fit_background(grids);
    return s;
}

CleanConfig exact_config(const ModelParams& p) {
    CleanConfig cfg;
    cfg.selection = SelectionConfig::exact(p);
    cfg.blank_value = std::vector<double>{kPaper};
    return cfg;
}

double ink_centroid(const Glyph& g, std::size_t r0, std::size_t c0, bool row) {
    double m = 0.0, acc = 0.0;
    for (std::size_t r = 0; r < g.height; ++r)
        for (std::size_t c = 0; c < g.width; ++c) {
            const double w = g.at(r, c) * (kPaper - kInk);
            if (w < 0.25) continue;
            m += w;
            acc += w * (row ? double(r0 + r) + 0.5 : double(c0 + c) + 0.5);
        }
    return acc / m;
}

}  // namespace

TEST(CleanBoxes, MaskAndMatchBoxes) {
    ModelParams m(1, {8, 8}, {3, 4}, 1);
    std::fill(m.masks.begin(), m.masks.end(), 0.1);
    m.mask(0, 1 * 4 + 1) = 0.6;
    m.mask(0, 2 * 4 + 3) = 0.5;
    const auto box = mask_box(m, 0, 0.5);
    ASSERT_TRUE(box);
    EXPECT_EQ(box->row0, 1u);
    EXPECT_EQ(box->col0, 1u);
    EXPECT_EQ(box->row1, 3u);
    EXPECT_EQ(box->col1, 4u);
    EXPECT_FALSE(mask_box(m, 0, 0.7));
    const PatchMatch pm{0, 30, 60, {0, {2, 1}, 1.0, true}};
    EXPECT_EQ(match_box(*box, 3, pm), (PixelBox{30 + 9, 60 + 6, 6, 9}));
}

TEST(CleanDocument, EmptyPageStopsAfterOnePass) {
    PageRaster page(48, 48, 1, kPaper);
    stamp(page, builtin_glyphs()[0], 2, 2);  // one glyph so the background sees ink
    PageRaster blank(48, 48, 1, kPaper);
    const auto s = make_setup(page, {24, 24}, {12, 12});
    auto cfg = exact_config(s.params);
    cfg.blank_value.reset();  // derived: the background's modal value
    const auto [out, report] = clean_document(blank, s.params, s.bg, s.pipe, cfg);
    EXPECT_TRUE(report.accepted.empty());
    EXPECT_EQ(report.passes, 1u);
    EXPECT_EQ(report.accepted_per_pass, std::vector<std::size_t>{0});
    const double mode = s.bg.mode()[0];
    EXPECT_NEAR(mode, kPaper, 0.01);
    for (double v : out.data) EXPECT_EQ(v, mode);
}

TEST(CleanDocument, SingleGlyphIsFoundOnce) {
    PageRaster page(48, 48, 1, kPaper);
    const auto glyphs = builtin_glyphs();
    stamp(page, glyphs[1], 17, 20);
    const auto s = make_setup(page, {24, 24}, {12, 12});
    const auto [out, report] = clean_document(page, s.params, s.bg, s.pipe, exact_config(s.params));
    ASSERT_EQ(report.accepted.size(), 1u);
    const auto& a = report.accepted[0];
    EXPECT_EQ(a.class_index, 1u);
    EXPECT_GT(a.quality, 0.9);
    EXPECT_EQ(a.pass, 1u);
    EXPECT_NEAR(a.center_row, ink_centroid(glyphs[1], 17, 20, true), 1e-9);
    EXPECT_NEAR(a.center_col, ink_centroid(glyphs[1], 17, 20, false), 1e-9);
    EXPECT_EQ(report.per_class, (std::vector<std::size_t>{0, 1}));
    EXPECT_EQ(report.accepted_per_pass, (std::vector<std::size_t>{1, 0}));
    // The reconstruction reproduces the glyph's ink and is blank elsewhere.
    for (std::size_t r = 0; r < 48; ++r)
        for (std::size_t c = 0; c < 48; ++c) EXPECT_NEAR(out.at(r, c), page.at(r, c), 1e-12) << r << "," << c;
}

TEST(CleanDocument, DirtOnlyPageAcceptsNothing) {
    DocumentSpec spec;
    spec.width = spec.height = 96;
    spec.instances_per_glyph = 0;
    spec.noise_sigma = 0.0;
    spec.strokes.push_back({6});
    spec.spots.push_back({6});
    spec.seed = 3;
    auto page = render_document(spec).first;
    stamp(page, builtin_glyphs()[0], 2, 2);  // a reference instance, away from the scored area
    const auto s = make_setup(page, {24, 24}, {12, 12});
    auto cfg = exact_config(s.params);
    const auto [out, report] = clean_document(page, s.params, s.bg, s.pipe, cfg);
    for (const auto& a : report.accepted) {
        EXPECT_LT(a.box.row, 14);
        EXPECT_LT(a.box.col, 11);
    }
    EXPECT_LE(report.accepted.size(), 1u);
}

TEST(CleanDocument, OccludedInstanceIsFoundInALaterPass) {
    // Patch 0 (left) holds an 'a' and an 'b'; patch 1 (right) holds a lone 'b'.
    // Each patch yields one match per pass, so the second glyph in patch 0
    // can only be found after the first has been blanked.
    PageRaster page(60, 24, 1, kPaper);
    const auto glyphs = builtin_glyphs();
    stamp(page, glyphs[0], 6, 2);
    stamp(page, glyphs[1], 6, 16);
    stamp(page, glyphs[1], 6, 40);
    const auto s = make_setup(page, {24, 30}, {24, 30});
    const auto [out, report] = clean_document(page, s.params, s.bg, s.pipe, exact_config(s.params));
    EXPECT_EQ(report.accepted_per_pass, (std::vector<std::size_t>{2, 1, 0}));
    EXPECT_EQ(report.passes, 3u);
    EXPECT_EQ(report.per_class, (std::vector<std::size_t>{1, 2}));
    EXPECT_TRUE(report.missing_exemplars.empty());
    for (std::size_t r = 0; r < 24; ++r)
        for (std::size_t c = 0; c < 60; ++c) EXPECT_NEAR(out.at(r, c), page.at(r, c), 1e-12);
}

TEST(CleanDocument, WithoutBlankingRunsOncePerCallAndIsIdempotent) {
    PageRaster page(60, 24, 1, kPaper);
    const auto glyphs = builtin_glyphs();
    stamp(page, glyphs[0], 6, 2);
    stamp(page, glyphs[1], 6, 16);
    stamp(page, glyphs[1], 6, 40);
    const auto s = make_setup(page, {24, 30}, {24, 30});
    auto cfg = exact_config(s.params);
    cfg.blanking = false;
    const auto [a, ra] = clean_document(page, s.params, s.bg, s.pipe, cfg);
    const auto [b, rb] = clean_document(page, s.params, s.bg, s.pipe, cfg);
    EXPECT_EQ(a.data, b.data);
    EXPECT_EQ(ra.passes, 1u);
    EXPECT_EQ(ra.accepted.size(), 2u);
    ASSERT_EQ(ra.accepted.size(), rb.accepted.size());
    for (std::size_t k = 0; k < ra.accepted.size(); ++k) EXPECT_EQ(ra.accepted[k].box, rb.accepted[k].box);
}

TEST(CleanDocument, ThreadCountInvariant) {
    DocumentSpec spec;
    spec.width = 120;
    spec.height = 96;
    spec.glyphs.resize(2);
    spec.instances_per_glyph = 6;
    spec.slot_height = 24;
    spec.slot_width = 24;
    spec.noise_sigma = 0.0;
    spec.seed = 4;
    const auto page = render_document(spec).first;
    const auto s = make_setup(page, {24, 24}, {12, 12});
    auto cfg = exact_config(s.params);
    cfg.threads = 1;
    const auto [a, ra] = clean_document(page, s.params, s.bg, s.pipe, cfg);
    cfg.threads = 4;
    const auto [b, rb] = clean_document(page, s.params, s.bg, s.pipe, cfg);
    EXPECT_EQ(a.data, b.data);
    EXPECT_EQ(ra.accepted_per_pass, rb.accepted_per_pass);
    EXPECT_EQ(ra.accepted.size(), 12u);
}

TEST(BestExemplars, HighestQualityThenLowerPatch) {
    PageRaster page(60, 24, 1, kPaper);
    const auto glyphs = builtin_glyphs();
    stamp(page, glyphs[0], 0, 0);
    stamp(page, glyphs[0], 0, 30);
    const auto s = make_setup(page, {24, 30}, {24, 30});
    const std::vector<double> blank{kPaper};
    const std::vector<std::size_t> classes{0, 1};
    std::vector<PatchMatch> m{{1, 0, 30, {0, {0, 0}, 0.8, true}}, {0, 0, 0, {0, {0, 0}, 0.8, true}},
                              {2, 0, 0, {0, {3, 3}, 0.99, false}}, {3, 0, 0, {1, {0, 0}, 0.3, true}}};
    const auto ex = best_exemplars(page, m, s.params, classes, 1, blank);
    ASSERT_TRUE(ex[0]);
    EXPECT_EQ(ex[0]->source_patch, 0u);  // tie on Q; the partly hidden one is ignored
    const auto cells = *mask_box(s.params, 0, 0.5);
    EXPECT_EQ(ex[0]->bitmap.width, cells.col1 - cells.col0);
    EXPECT_EQ(ex[0]->offset.col, std::ptrdiff_t(cells.col0));
    ASSERT_TRUE(ex[1]);
    EXPECT_EQ(ex[1]->source_patch, 3u);
    m[0].match.quality = 0.81;
    EXPECT_EQ(best_exemplars(page, m, s.params, classes, 1, blank)[0]->source_patch, 1u);
    const std::vector<std::size_t> only_first{0};
    EXPECT_FALSE(best_exemplars(page, m, s.params, only_first, 1, blank)[1]);
}

TEST(Paint, InkWinsOverBlank) {
    PageRaster target(4, 1, 1, kPaper);
    target.at(0, 0) = kInk;
    Exemplar ex;
    ex.bitmap = PageRaster(4, 1, 1, kPaper);
    ex.bitmap.at(0, 1) = 0.5;
    ex.bitmap.at(0, 0) = 0.6;
    const std::vector<double> blank{kPaper};
    paint(target, ex, {0, 0, 1, 4}, blank);
    EXPECT_EQ(target.at(0, 0), kInk);  // darker pixel already there survives
    EXPECT_EQ(target.at(0, 1), 0.5);
    EXPECT_EQ(target.at(0, 2), kPaper);
}

TEST(CleanConfigValidate, RejectsBadValues) {
    CleanConfig c;
    c.q_threshold = 1.5;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = {};
    c.max_passes = 0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
}

namespace {

PageRaster grid_page(std::uint64_t seed) {
    DocumentSpec spec;
    spec.width = 120;
    spec.height = 96;
    spec.glyphs.resize(2);
    spec.instances_per_glyph = 6;
    spec.slot_height = 24;
    spec.slot_width = 24;
    spec.noise_sigma = 0.0;
    spec.seed = seed;
    return render_document(spec).first;
}

}  // namespace

TEST(CleanDocument, ReconstructionIsAFixpoint) {
    const auto page = grid_page(5);
    const auto s = make_setup(page, {24, 24}, {12, 12});
    auto cfg = exact_config(s.params);
    const auto [recon, first] = clean_document(page, s.params, s.bg, s.pipe, cfg);
    ASSERT_EQ(first.accepted.size(), 12u);
    cfg.blanking = false;
    const auto [again, second] = clean_document(recon, s.params, s.bg, s.pipe, cfg);
    for (const auto& a : first.accepted) {
        const auto it = std::find_if(second.accepted.begin(), second.accepted.end(),
                                     [&](const AcceptedMatch& b) { return b.box == a.box && b.class_index == a.class_index; });
        ASSERT_NE(it, second.accepted.end());
        EXPECT_GE(it->quality, 0.99);
    }
}

TEST(CleanDocument, LoweringThresholdOnlyAddsMatches) {
    auto page = grid_page(6);
    // Smudge one glyph so its quality lands between the two thresholds.
    for (std::size_t r = 8; r < 20; ++r)
        for (std::size_t c = 8; c < 12; ++c) page.at(r, c) = kPaper;
    const auto s = make_setup(page, {24, 24}, {12, 12});
    auto cfg = exact_config(s.params);
    const auto strict = clean_document(page, s.params, s.bg, s.pipe, cfg).second;
    cfg.q_threshold = 0.2;
    const auto loose = clean_document(page, s.params, s.bg, s.pipe, cfg).second;
    EXPECT_GE(loose.accepted.size(), strict.accepted.size());
    for (const auto& a : strict.accepted)
        EXPECT_TRUE(std::any_of(loose.accepted.begin(), loose.accepted.end(),
                                [&](const AcceptedMatch& b) { return b.box == a.box && b.class_index == a.class_index; }));
}
