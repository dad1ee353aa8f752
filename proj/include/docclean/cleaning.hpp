#pragma once

// Paint-and-blank document cleaning: the best clean instance of every
// character class becomes its exemplar, then accepted matches are painted onto
// a blank reconstruction and blanked in the working page until a pass accepts
// nothing.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "docclean/background.hpp"
#include "docclean/features.hpp"
#include "docclean/inference.hpp"
#include "docclean/learning.hpp"
#include "docclean/matching.hpp"
#include "docclean/raster.hpp"

namespace docclean {

struct CleanConfig {
    double q_threshold = 0.5;
    std::size_t max_passes = 10;
    double gamma = kDefaultGamma;
    double mask_threshold = 0.5;   // cells with α >= this span the bounding box
    double max_overlap = 0.3;      // fraction of a box's own area
    SelectionConfig selection{};
    ClassThresholds class_thresholds{};
    unsigned threads = 1;
    bool blanking = true;
    std::optional<std::vector<double>> blank_value;  // per channel; derived when empty

    void validate() const {
        if (!(q_threshold >= 0.0 && q_threshold <= 1.0)) throw std::invalid_argument("q_threshold must lie in [0,1]");
        if (max_passes < 1) throw std::invalid_argument("max_passes must be >= 1");
        if (!(gamma > 0.0)) throw std::invalid_argument("gamma must be positive");
        if (!(max_overlap >= 0.0 && max_overlap <= 1.0)) throw std::invalid_argument("max_overlap must lie in [0,1]");
    }
};

/// A per-patch match together with where the patch sits on the page.
struct PatchMatch {
    std::size_t patch_id = 0;
    std::size_t origin_row = 0;
    std::size_t origin_col = 0;
    Match match;
};

struct Exemplar {
    std::size_t class_index = 0;
    PixelBox offset;  // bounding box relative to the matched pattern origin, pixels
    PageRaster bitmap;
    std::size_t source_patch = 0;
    double quality = 0.0;
    double anchor_row = 0.0;  // ink centroid inside the bitmap
    double anchor_col = 0.0;
};

struct AcceptedMatch {
    std::size_t class_index = 0;
    std::size_t patch_id = 0;
    Position position;  // pattern position inside the patch
    PixelBox box;       // painted page region
    double quality = 0.0;
    std::size_t pass = 0;  // 1-based
    double center_row = 0.0;
    double center_col = 0.0;
};

struct CleaningReport {
    std::vector<AcceptedMatch> accepted;
    std::vector<std::size_t> per_class;          // accepted count per class
    std::vector<std::size_t> accepted_per_pass;  // the final entry is 0 unless the pass limit was hit
    std::vector<std::size_t> character_classes;
    std::vector<std::size_t> missing_exemplars;  // character classes without a fully visible match
    std::size_t passes = 0;
};

struct CleaningState {
    PageRaster working;
    PageRaster reconstruction;
    std::vector<AcceptedMatch> accepted;
    std::size_t pass_count = 0;
};

/// Tight cell box around pattern cells with α ≥ threshold; nullopt when none.
struct CellBox {
    std::size_t row0, col0, row1, col1;  // inclusive-exclusive
};

inline std::optional<CellBox> mask_box(const ModelParams& params, std::size_t c, double threshold) {
    std::optional<CellBox> box;
    for (std::size_t r = 0; r < params.pattern_dims.rows; ++r)
        for (std::size_t q = 0; q < params.pattern_dims.cols; ++q) {
            if (params.mask(c, r * params.pattern_dims.cols + q) < threshold) continue;
            if (!box) box = CellBox{r, q, r + 1, q + 1};
            box->row0 = std::min(box->row0, r);
            box->col0 = std::min(box->col0, q);
            box->row1 = std::max(box->row1, r + 1);
            box->col1 = std::max(box->col1, q + 1);
        }
    return box;
}

/// Page-pixel box covered by the α box of class c matched at `m`. A cell
/// stands for the `cell_stride` pixels starting at its sampling point.
inline PixelBox match_box(const CellBox& cells, std::size_t cell_stride, const PatchMatch& m) {
    const auto s = static_cast<std::ptrdiff_t>(cell_stride);
    return {static_cast<std::ptrdiff_t>(m.origin_row) + (static_cast<std::ptrdiff_t>(m.match.position.row + cells.row0)) * s,
            static_cast<std::ptrdiff_t>(m.origin_col) + (static_cast<std::ptrdiff_t>(m.match.position.col + cells.col0)) * s,
            (cells.row1 - cells.row0) * cell_stride, (cells.col1 - cells.col0) * cell_stride};
}

inline PixelBox clip_box(const PixelBox& b, const PageRaster& page) {
    const auto r0 = std::max<std::ptrdiff_t>(b.row, 0), c0 = std::max<std::ptrdiff_t>(b.col, 0);
    const auto r1 = std::min<std::ptrdiff_t>(b.row + static_cast<std::ptrdiff_t>(b.height), static_cast<std::ptrdiff_t>(page.height));
    const auto c1 = std::min<std::ptrdiff_t>(b.col + static_cast<std::ptrdiff_t>(b.width), static_cast<std::ptrdiff_t>(page.width));
    if (r1 <= r0 || c1 <= c0) return {r0, c0, 0, 0};
    return {r0, c0, static_cast<std::size_t>(r1 - r0), static_cast<std::size_t>(c1 - c0)};
}

inline PageRaster crop(const PageRaster& page, const PixelBox& box) {
    PageRaster out(box.width, box.height, page.channels);
    for (std::size_t r = 0; r < box.height; ++r)
        for (std::size_t c = 0; c < box.width; ++c)
            for (std::size_t ch = 0; ch < page.channels; ++ch)
                out.at(r, c, ch) = page.at(static_cast<std::size_t>(box.row) + r, static_cast<std::size_t>(box.col) + c, ch);
    return out;
}

/// Per-channel mode of the page's pixel values over 64 uniform bins on [0,1].
inline std::vector<double> pixel_mode(const PageRaster& page) {
    constexpr std::size_t bins = 64;
    std::vector<double> out;
    for (std::size_t ch = 0; ch < page.channels; ++ch) {
        std::vector<std::size_t> hist(bins, 0);
        for (std::size_t p = 0; p < page.width * page.height; ++p) {
            const double v = page.data[p * page.channels + ch];
            ++hist[std::min(bins - 1, static_cast<std::size_t>(v * bins))];
        }
        const auto b = static_cast<std::size_t>(std::max_element(hist.begin(), hist.end()) - hist.begin());
        out.push_back((static_cast<double>(b) + 0.5) / bins);
    }
    return out;
}

/// Fill value for blanked boxes. With color features the background density
/// lives in pixel space and its mode is used; with Gabor features it does not,
/// so the pixel mode of the page stands in.
inline std::vector<double> blank_value(const PageRaster& page, const BackgroundDensity& bg, const FeaturePipeline& pipe) {
    if (pipe.kind == FeatureKind::color && bg.feature_dim() == page.channels) {
        auto mode = bg.mode();
        for (double& v : mode) v = std::clamp(v, 0.0, 1.0);
        return mode;
    }
    return pixel_mode(page);
}

namespace detail {

inline double ink_weight(const PageRaster& img, std::size_t r, std::size_t c, std::span<const double> blank) {
    double d = 0.0;
    for (std::size_t ch = 0; ch < img.channels; ++ch) d = std::max(d, std::abs(img.at(r, c, ch) - blank[ch]));
    return d;
}

inline constexpr double kInkContrast = 0.25;

}  // namespace detail

/// Matches every patch of `page`; parallel across patches, results in patch order.
inline std::vector<PatchMatch> match_page(const PageRaster& page, const ModelParams& params, const BackgroundDensity& bg,
                                          const FeaturePipeline& pipe, GridShape stride, const CleanConfig& config,
                                          std::span<const std::size_t> only = {}) {
    const ModelCache cache(params, bg);
    const auto reliable = reliable_cells_all(params, config.selection.lambda);
    auto patches = extract_patches(page, pipe.patch_size, stride);
    std::vector<std::size_t> ids;
    if (only.empty()) {
        ids.resize(patches.size());
        std::iota(ids.begin(), ids.end(), 0);
    } else {
        ids.assign(only.begin(), only.end());
    }
    std::optional<GaborBank> bank;
    if (pipe.kind == FeatureKind::gabor) bank.emplace(pipe.gabor);
    std::vector<PatchMatch> out(ids.size());
    parallel_blocks(ids.size(), 4, config.threads, [&](std::size_t, std::size_t begin, std::size_t end) {
        for (std::size_t k = begin; k < end; ++k) {
            const auto& patch = patches.at(ids[k]);
            const auto grid = patch_features(patch, pipe, bank ? &*bank : nullptr);
            if (grid.dims != params.patch_dims || grid.feature_dim != params.feature_dim)
                throw std::invalid_argument("page features do not match the model dimensions");
            out[k] = {ids[k], patch.origin_row, patch.origin_col,
                      match_patch(cache, reliable, grid, config.selection, config.gamma)};
        }
    });
    return out;
}

/// Highest-Q fully visible match per character class, cut from `page`. Ties go
/// to the lower patch id. Classes without a candidate are absent.
inline std::vector<std::optional<Exemplar>> best_exemplars(const PageRaster& page, std::span<const PatchMatch> matches,
                                                           const ModelParams& params, std::span<const std::size_t> classes,
                                                           std::size_t cell_stride, std::span<const double> blank,
                                                           double mask_threshold = 0.5) {
    std::vector<std::optional<Exemplar>> out(params.num_classes);
    std::vector<const PatchMatch*> best(params.num_classes, nullptr);
    for (const auto& m : matches) {
        const std::size_t c = m.match.class_index;
        if (!m.match.fully_visible || std::find(classes.begin(), classes.end(), c) == classes.end()) continue;
        const auto* cur = best[c];
        if (!cur || m.match.quality > cur->match.quality ||
            (m.match.quality == cur->match.quality && m.patch_id < cur->patch_id))
            best[c] = &m;
    }
    for (std::size_t c = 0; c < params.num_classes; ++c) {
        if (!best[c]) continue;
        const auto cells = mask_box(params, c, mask_threshold);
        if (!cells) continue;
        const PixelBox page_box = clip_box(match_box(*cells, cell_stride, *best[c]), page);
        if (page_box.area() == 0) continue;
        Exemplar ex;
        ex.class_index = c;
        ex.bitmap = crop(page, page_box);
        ex.source_patch = best[c]->patch_id;
        ex.quality = best[c]->match.quality;
        const auto pattern_row = static_cast<std::ptrdiff_t>(best[c]->origin_row + best[c]->match.position.row * cell_stride);
        const auto pattern_col = static_cast<std::ptrdiff_t>(best[c]->origin_col + best[c]->match.position.col * cell_stride);
        ex.offset = {page_box.row - pattern_row, page_box.col - pattern_col, page_box.height, page_box.width};
        double mass = 0.0, wr = 0.0, wc = 0.0;
        for (std::size_t r = 0; r < ex.bitmap.height; ++r)
            for (std::size_t q = 0; q < ex.bitmap.width; ++q) {
                const double w = detail::ink_weight(ex.bitmap, r, q, blank);
                if (w < detail::kInkContrast) continue;
                mass += w;
                wr += w * (static_cast<double>(r) + 0.5);
                wc += w * (static_cast<double>(q) + 0.5);
            }
        ex.anchor_row = mass > 0 ? wr / mass : 0.5 * static_cast<double>(ex.bitmap.height);
        ex.anchor_col = mass > 0 ? wc / mass : 0.5 * static_cast<double>(ex.bitmap.width);
        out[c] = std::move(ex);
    }
    return out;
}

/// Paints `ex` at `box`: a pixel takes the exemplar value when that deviates
/// more from the blank value than what is already there, so neighbouring
/// paints never erase each other's ink.
inline void paint(PageRaster& target, const Exemplar& ex, const PixelBox& box, std::span<const double> blank) {
    for (std::size_t r = 0; r < box.height && r < ex.bitmap.height; ++r)
        for (std::size_t c = 0; c < box.width && c < ex.bitmap.width; ++c) {
            const auto pr = static_cast<std::size_t>(box.row) + r, pc = static_cast<std::size_t>(box.col) + c;
            if (detail::ink_weight(ex.bitmap, r, c, blank) <= detail::ink_weight(target, pr, pc, blank)) continue;
            for (std::size_t ch = 0; ch < target.channels; ++ch) target.at(pr, pc, ch) = ex.bitmap.at(r, c, ch);
        }
}

inline void fill_box(PageRaster& target, const PixelBox& box, std::span<const double> value) {
    for (std::size_t r = 0; r < box.height; ++r)
        for (std::size_t c = 0; c < box.width; ++c)
            for (std::size_t ch = 0; ch < target.channels; ++ch)
                target.at(static_cast<std::size_t>(box.row) + r, static_cast<std::size_t>(box.col) + c, ch) = value[ch];
}

/// Commit phase of one pass: acceptable matches in descending Q (then patch
/// id), skipping any whose box overlaps an already accepted box (this pass or
/// an earlier one) by more than `max_overlap` of its own area. Returns the
/// number accepted.
inline std::size_t commit_pass(CleaningState& state, std::span<const PatchMatch> matches,
                               std::span<const std::optional<Exemplar>> exemplars, std::span<const double> blank,
                               std::size_t cell_stride, const CleanConfig& config) {
    std::vector<const PatchMatch*> order;
    for (const auto& m : matches) {
        const std::size_t c = m.match.class_index;
        if (!m.match.fully_visible || m.match.quality < config.q_threshold) continue;
        if (c >= exemplars.size() || !exemplars[c]) continue;
        order.push_back(&m);
    }
    std::stable_sort(order.begin(), order.end(), [](const PatchMatch* a, const PatchMatch* b) {
        if (a->match.quality != b->match.quality) return a->match.quality > b->match.quality;
        return a->patch_id < b->patch_id;
    });
    ++state.pass_count;
    std::vector<PixelBox> pass_boxes;
    std::vector<PixelBox> taken;
    for (const auto& a : state.accepted) taken.push_back(a.box);
    for (const PatchMatch* m : order) {
        const Exemplar& ex = *exemplars[m->match.class_index];
        const auto pattern_row = static_cast<std::ptrdiff_t>(m->origin_row + m->match.position.row * cell_stride);
        const auto pattern_col = static_cast<std::ptrdiff_t>(m->origin_col + m->match.position.col * cell_stride);
        const PixelBox want{pattern_row + ex.offset.row, pattern_col + ex.offset.col, ex.offset.height, ex.offset.width};
        const PixelBox box = clip_box(want, state.working);
        if (box.area() == 0 || box != want) continue;
        const bool clash = std::any_of(taken.begin(), taken.end(), [&](const PixelBox& b) {
            return static_cast<double>(box.intersection_area(b)) > config.max_overlap * static_cast<double>(box.area());
        });
        if (clash) continue;
        pass_boxes.push_back(box);
        taken.push_back(box);
        paint(state.reconstruction, ex, box, blank);
        if (config.blanking) fill_box(state.working, box, blank);
        state.accepted.push_back({m->match.class_index, m->patch_id, m->match.position, box, m->match.quality,
                                  state.pass_count, static_cast<double>(box.row) + ex.anchor_row,
                                  static_cast<double>(box.col) + ex.anchor_col});
    }
    return pass_boxes.size();
}

/// Full cleaning loop. Pass 1 matches every patch and selects the exemplars
/// from the original page; later passes re-match only the patches touched by
/// the previous pass's blanking.
inline std::pair<PageRaster, CleaningReport> clean_document(const PageRaster& page, const ModelParams& params,
                                                            const BackgroundDensity& bg, const FeaturePipeline& pipe,
                                                            const CleanConfig& config) {
    config.validate();
    page.validate();
    config.selection.validate(params);
    const GridShape stride = pipe.effective_stride(params.pattern_dims);
    const std::size_t cs = pipe.cell_stride();
    const auto blank = config.blank_value ? *config.blank_value : blank_value(page, bg, pipe);
    if (blank.size() != page.channels) throw std::invalid_argument("blank value must have one entry per channel");

    CleaningReport report;
    report.character_classes = classify_classes(params, config.class_thresholds).character_classes();
    report.per_class.assign(params.num_classes, 0);

    CleaningState state{page, PageRaster(page.width, page.height, page.channels), {}, 0};
    for (std::size_t p = 0; p < state.reconstruction.data.size(); ++p)
        state.reconstruction.data[p] = blank[p % page.channels];

    auto matches = match_page(page, params, bg, pipe, stride, config);
    const auto exemplars = best_exemplars(page, matches, params, report.character_classes, cs, blank, config.mask_threshold);
    for (std::size_t c : report.character_classes)
        if (!exemplars[c]) report.missing_exemplars.push_back(c);

    // Patch page rectangles, for finding the patches a blanked box touches.
    std::vector<PixelBox> patch_rects;
    for (std::size_t r = 0; r + pipe.patch_size.rows <= page.height; r += stride.rows)
        for (std::size_t c = 0; c + pipe.patch_size.cols <= page.width; c += stride.cols)
            patch_rects.push_back({static_cast<std::ptrdiff_t>(r), static_cast<std::ptrdiff_t>(c), pipe.patch_size.rows,
                                   pipe.patch_size.cols});

    for (std::size_t pass = 0; pass < config.max_passes; ++pass) {
        const std::size_t before = state.accepted.size();
        const std::size_t n = commit_pass(state, matches, exemplars, blank, cs, config);
        report.accepted_per_pass.push_back(n);
        if (n == 0 || !config.blanking) break;
        std::vector<std::size_t> dirty;
        for (std::size_t id = 0; id < patch_rects.size(); ++id) {
            const bool touched = std::any_of(state.accepted.begin() + static_cast<std::ptrdiff_t>(before), state.accepted.end(),
                                             [&](const AcceptedMatch& a) { return patch_rects[id].intersection_area(a.box) > 0; });
            if (touched) dirty.push_back(id);
        }
        matches = match_page(state.working, params, bg, pipe, stride, config, dirty);
    }
    report.passes = state.pass_count;
    report.accepted = state.accepted;
    for (const auto& a : report.accepted) ++report.per_class[a.class_index];
    return {std::move(state.reconstruction), std::move(report)};
}

}  // namespace docclean
