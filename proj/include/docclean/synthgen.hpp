#pragma once

// Ground-truth corrupted documents: glyph bitmaps placed on a grid (optionally
// jittered), overlaid with anti-aliased ink strokes and grayish spots, plus a
// manifest for precision/recall scoring of cleaning reports.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "docclean/common.hpp"
#include "docclean/raster.hpp"

namespace docclean {

/// Coverage bitmap in [0,1]; 1 is full ink.
struct Glyph {
    std::string name;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> coverage;

    double at(std::size_t r, std::size_t c) const { return coverage[r * width + c]; }
};

inline Glyph glyph_from_art(std::string name, std::span<const char* const> rows) {
    Glyph g{std::move(name), rows.size(), std::string(rows[0]).size(), {}};
    for (const char* row : rows) {
        const std::string s(row);
        if (s.size() != g.width) throw std::invalid_argument("glyph rows must have equal length");
        for (char ch : s) g.coverage.push_back(ch == '#' ? 1.0 : 0.0);
    }
    return g;
}

/// Nearest-neighbour upscaling by an integer factor.
inline Glyph scale_glyph(const Glyph& g, std::size_t factor) {
    if (factor <= 1) return g;
    Glyph out{g.name, g.height * factor, g.width * factor, {}};
    out.coverage.resize(out.height * out.width);
    for (std::size_t r = 0; r < out.height; ++r)
        for (std::size_t c = 0; c < out.width; ++c) out.coverage[r * out.width + c] = g.at(r / factor, c / factor);
    return out;
}

/// Five 12x9 glyphs loosely shaped like a, b, e, s, y.
inline std::vector<Glyph> builtin_glyphs() {
    static constexpr const char* a[] = {
        ".........", "..#####..", ".##...##.", "......##.", "..######.", ".##...##.",
        ".##...##.", ".##..###.", "..###.##.", ".........", ".........", "........."};
    static constexpr const char* b[] = {
        ".##......", ".##......", ".##......", ".######..", ".##...##.", ".##...##.",
        ".##...##.", ".##...##.", ".######..", ".........", ".........", "........."};
    static constexpr const char* e[] = {
        ".........", ".........", "..#####..", ".##...##.", ".#######.", ".##......",
        ".##......", ".##...##.", "..#####..", ".........", ".........", "........."};
    static constexpr const char* s[] = {
        ".........", ".........", "..######.", ".##......", ".##......", "..#####..",
        "......##.", "......##.", ".######..", ".........", ".........", "........."};
    static constexpr const char* y[] = {
        ".........", ".........", ".##...##.", ".##...##.", ".##...##.", "..##.##..",
        "...###...", "...##....", "..##.....", ".##......", ".........", "........."};
    return {glyph_from_art("a", a), glyph_from_art("b", b), glyph_from_art("e", e), glyph_from_art("s", s),
            glyph_from_art("y", y)};
}

enum class Placement { grid, jittered };

struct StrokeDirt {
    std::size_t count = 0;
    double length_min = 20.0, length_max = 60.0;   // pixels
    double thickness_min = 1.0, thickness_max = 2.0;
    double angle_min = 0.0, angle_max = 180.0;      // degrees
};

struct SpotDirt {
    std::size_t count = 0;
    double radius_min = 2.0, radius_max = 5.0;
    double intensity_min = 0.4, intensity_max = 0.7;  // gray level of the spot centre
};

struct DocumentSpec {
    std::size_t width = 400;
    std::size_t height = 400;
    std::vector<Glyph> glyphs = builtin_glyphs();
    std::size_t instances_per_glyph = 10;
    Placement placement = Placement::grid;
    std::size_t slot_height = 18;  // grid pitch, pixels
    std::size_t slot_width = 14;
    std::size_t margin = 8;
    std::size_t jitter = 0;  // max offset per axis for jittered placement
    double ink = 0.05;
    double paper = 0.95;
    double noise_sigma = 0.02;
    std::vector<StrokeDirt> strokes;
    std::vector<SpotDirt> spots;
    std::uint64_t seed = 0;
};

struct GlyphInstance {
    std::size_t glyph_id = 0;
    PixelBox box;           // full glyph bitmap placement
    double center_row = 0;  // ink centroid
    double center_col = 0;
};

struct DirtRegion {
    std::string kind;  // "stroke" | "spot"
    PixelBox box;
};

struct GroundTruth {
    std::vector<GlyphInstance> instances;
    std::vector<DirtRegion> dirt;
    std::size_t ink_pixels = 0;   // glyph pixels with coverage >= 0.5
    std::size_t dirt_pixels = 0;  // pixels with dirt coverage >= 0.5
    std::vector<std::string> glyph_names;

    double dirt_to_ink_ratio() const { return ink_pixels ? double(dirt_pixels) / double(ink_pixels) : 0.0; }
};

namespace detail {

inline constexpr std::uint64_t kPlacementStream = 11;
inline constexpr std::uint64_t kDirtStream = 12;
inline constexpr std::uint64_t kNoiseStream = 13;

inline double segment_distance(double py, double px, double ay, double ax, double by, double bx) {
    const double vy = by - ay, vx = bx - ax;
    const double len2 = vy * vy + vx * vx;
    double t = len2 > 0 ? ((py - ay) * vy + (px - ax) * vx) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double dy = py - (ay + t * vy), dx = px - (ax + t * vx);
    return std::sqrt(dy * dy + dx * dx);
}

}  // namespace detail

/// Renders the page (single channel) and its manifest. Glyphs are drawn first,
/// dirt after them, then i.i.d. Gaussian pixel noise; each stage has its own
/// random stream, so disabling dirt leaves glyphs and noise unchanged.
inline std::pair<PageRaster, GroundTruth> render_document(const DocumentSpec& spec) {
    if (spec.width == 0 || spec.height == 0) throw std::invalid_argument("page dims must be positive");
    if (spec.slot_height == 0 || spec.slot_width == 0) throw std::invalid_argument("slot dims must be positive");
    std::size_t glyph_h = 0, glyph_w = 0;
    for (const auto& g : spec.glyphs) {
        glyph_h = std::max(glyph_h, g.height);
        glyph_w = std::max(glyph_w, g.width);
    }
    const std::size_t total = spec.glyphs.size() * spec.instances_per_glyph;
    const std::size_t jitter = spec.placement == Placement::jittered ? spec.jitter : 0;
    GroundTruth truth;
    for (const auto& g : spec.glyphs) truth.glyph_names.push_back(g.name);
    PageRaster page(spec.width, spec.height, 1, spec.paper);
    std::vector<double> ink_cov(spec.width * spec.height, 0.0);

    if (total > 0) {
        if (2 * spec.margin + glyph_h + 2 * jitter > spec.height || 2 * spec.margin + glyph_w + 2 * jitter > spec.width)
            throw std::invalid_argument("glyphs do not fit inside the page margins");
        const std::size_t rows = (spec.height - 2 * spec.margin - 2 * jitter - glyph_h) / spec.slot_height + 1;
        const std::size_t cols = (spec.width - 2 * spec.margin - 2 * jitter - glyph_w) / spec.slot_width + 1;
        if (rows * cols < total)
            throw std::invalid_argument("infeasible placement: " + std::to_string(total) + " glyphs need more than the " +
                                        std::to_string(rows * cols) + " available slots");
        std::mt19937_64 rng(derive_seed(spec.seed, detail::kPlacementStream));
        std::vector<std::size_t> slots(rows * cols);
        std::iota(slots.begin(), slots.end(), 0);
        std::shuffle(slots.begin(), slots.end(), rng);
        slots.resize(total);
        std::sort(slots.begin(), slots.end());
        std::vector<std::size_t> ids;
        for (std::size_t g = 0; g < spec.glyphs.size(); ++g) ids.insert(ids.end(), spec.instances_per_glyph, g);
        std::shuffle(ids.begin(), ids.end(), rng);
        std::uniform_int_distribution<int> jit(-static_cast<int>(jitter), static_cast<int>(jitter));
        for (std::size_t k = 0; k < total; ++k) {
            const auto& g = spec.glyphs[ids[k]];
            const std::size_t sr = slots[k] / cols, sc = slots[k] % cols;
            const int jr = jitter ? jit(rng) : 0, jc = jitter ? jit(rng) : 0;
            const auto r0 = static_cast<std::ptrdiff_t>(spec.margin + jitter + sr * spec.slot_height) + jr;
            const auto c0 = static_cast<std::ptrdiff_t>(spec.margin + jitter + sc * spec.slot_width) + jc;
            GlyphInstance inst{ids[k], {r0, c0, g.height, g.width}, 0.0, 0.0};
            double mass = 0.0;
            for (std::size_t r = 0; r < g.height; ++r) {
                for (std::size_t c = 0; c < g.width; ++c) {
                    const double cov = g.at(r, c);
                    if (cov <= 0.0) continue;
                    const auto pr = static_cast<std::size_t>(r0) + r, pc = static_cast<std::size_t>(c0) + c;
                    double& dst = ink_cov[pr * spec.width + pc];
                    dst = std::max(dst, cov);
                    mass += cov;
                    inst.center_row += cov * (static_cast<double>(pr) + 0.5);
                    inst.center_col += cov * (static_cast<double>(pc) + 0.5);
                }
            }
            if (mass > 0.0) {
                inst.center_row /= mass;
                inst.center_col /= mass;
            }
            truth.instances.push_back(inst);
        }
    }
    for (std::size_t p = 0; p < ink_cov.size(); ++p) {
        page.data[p] = spec.paper - ink_cov[p] * (spec.paper - spec.ink);
        if (ink_cov[p] >= 0.5) ++truth.ink_pixels;
    }

    std::mt19937_64 dirt_rng(derive_seed(spec.seed, detail::kDirtStream));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto in_range = [&](double lo, double hi) { return lo + unit(dirt_rng) * (hi - lo); };
    std::vector<double> dirt_cov(page.data.size(), 0.0);
    auto blend = [&](std::size_t r, std::size_t c, double cov, double value) {
        if (cov <= 0.0) return;
        double& px = page.data[r * spec.width + c];
        px = px * (1.0 - cov) + std::min(px, value) * cov;
        double& d = dirt_cov[r * spec.width + c];
        d = std::max(d, cov);
    };
    for (const auto& group : spec.strokes) {
        for (std::size_t k = 0; k < group.count; ++k) {
            const double cy = in_range(0.0, double(spec.height)), cx = in_range(0.0, double(spec.width));
            const double len = in_range(group.length_min, group.length_max);
            const double ang = in_range(group.angle_min, group.angle_max) * std::numbers::pi / 180.0;
            const double thick = in_range(group.thickness_min, group.thickness_max);
            const double ay = cy - 0.5 * len * std::sin(ang), ax = cx - 0.5 * len * std::cos(ang);
            const double by = cy + 0.5 * len * std::sin(ang), bx = cx + 0.5 * len * std::cos(ang);
            const double pad = thick / 2.0 + 1.0;
            const auto r0 = static_cast<std::ptrdiff_t>(std::floor(std::min(ay, by) - pad));
            const auto r1 = static_cast<std::ptrdiff_t>(std::ceil(std::max(ay, by) + pad));
            const auto c0 = static_cast<std::ptrdiff_t>(std::floor(std::min(ax, bx) - pad));
            const auto c1 = static_cast<std::ptrdiff_t>(std::ceil(std::max(ax, bx) + pad));
            const auto rr0 = std::max<std::ptrdiff_t>(r0, 0), cc0 = std::max<std::ptrdiff_t>(c0, 0);
            const auto rr1 = std::min<std::ptrdiff_t>(r1, static_cast<std::ptrdiff_t>(spec.height));
            const auto cc1 = std::min<std::ptrdiff_t>(c1, static_cast<std::ptrdiff_t>(spec.width));
            if (rr1 <= rr0 || cc1 <= cc0) continue;
            for (auto r = rr0; r < rr1; ++r)
                for (auto c = cc0; c < cc1; ++c) {
                    const double dist = detail::segment_distance(double(r) + 0.5, double(c) + 0.5, ay, ax, by, bx);
                    blend(std::size_t(r), std::size_t(c), std::clamp(thick / 2.0 + 0.5 - dist, 0.0, 1.0), spec.ink);
                }
            truth.dirt.push_back({"stroke", {rr0, cc0, std::size_t(rr1 - rr0), std::size_t(cc1 - cc0)}});
        }
    }
    for (const auto& group : spec.spots) {
        for (std::size_t k = 0; k < group.count; ++k) {
            const double cy = in_range(0.0, double(spec.height)), cx = in_range(0.0, double(spec.width));
            const double radius = in_range(group.radius_min, group.radius_max);
            const double level = in_range(group.intensity_min, group.intensity_max);
            const auto rr0 = std::max<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(std::floor(cy - radius - 1)), 0);
            const auto cc0 = std::max<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(std::floor(cx - radius - 1)), 0);
            const auto rr1 = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(std::ceil(cy + radius + 1)), std::ptrdiff_t(spec.height));
            const auto cc1 = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(std::ceil(cx + radius + 1)), std::ptrdiff_t(spec.width));
            if (rr1 <= rr0 || cc1 <= cc0) continue;
            for (auto r = rr0; r < rr1; ++r)
                for (auto c = cc0; c < cc1; ++c) {
                    const double dist = std::hypot(double(r) + 0.5 - cy, double(c) + 0.5 - cx);
                    blend(std::size_t(r), std::size_t(c), std::clamp(radius + 0.5 - dist, 0.0, 1.0), level);
                }
            truth.dirt.push_back({"spot", {rr0, cc0, std::size_t(rr1 - rr0), std::size_t(cc1 - cc0)}});
        }
    }
    for (double d : dirt_cov)
        if (d >= 0.5) ++truth.dirt_pixels;

    if (spec.noise_sigma > 0.0) {
        std::mt19937_64 noise_rng(derive_seed(spec.seed, detail::kNoiseStream));
        std::normal_distribution<double> noise(0.0, spec.noise_sigma);
        for (double& v : page.data) v = std::clamp(v + noise(noise_rng), 0.0, 1.0);
    }
    return {std::move(page), std::move(truth)};
}

/// A detected glyph: class label and the page position of its centre.
struct Detection {
    std::size_t class_index = 0;
    double row = 0.0;
    double col = 0.0;

    friend auto operator<=>(const Detection&, const Detection&) = default;
};

struct CleaningScore {
    double recall = 0.0;
    double precision = 0.0;
    std::size_t true_positives = 0;
    std::size_t false_positives = 0;
    std::size_t false_negatives = 0;
};

/// Greedy one-to-one assignment of detections to truth instances of the same
/// class whose centres lie within `tolerance` pixels on both axes, closest
/// pairs first. Pairs are ordered by content, so input order is irrelevant.
inline CleaningScore score_cleaning(std::span<const Detection> detections, const GroundTruth& truth, double tolerance) {
    std::vector<Detection> dets(detections.begin(), detections.end());
    std::sort(dets.begin(), dets.end());
    struct Pair {
        double dist;
        std::size_t truth_index, det_index;
    };
    std::vector<Pair> pairs;
    for (std::size_t t = 0; t < truth.instances.size(); ++t) {
        const auto& inst = truth.instances[t];
        for (std::size_t d = 0; d < dets.size(); ++d) {
            if (dets[d].class_index != inst.glyph_id) continue;
            const double dist = std::max(std::abs(dets[d].row - inst.center_row), std::abs(dets[d].col - inst.center_col));
            if (dist <= tolerance) pairs.push_back({dist, t, d});
        }
    }
    std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
        if (a.dist != b.dist) return a.dist < b.dist;
        if (a.truth_index != b.truth_index) return a.truth_index < b.truth_index;
        return a.det_index < b.det_index;
    });
    std::vector<bool> truth_used(truth.instances.size(), false), det_used(dets.size(), false);
    CleaningScore s;
    for (const auto& p : pairs) {
        if (truth_used[p.truth_index] || det_used[p.det_index]) continue;
        truth_used[p.truth_index] = det_used[p.det_index] = true;
        ++s.true_positives;
    }
    s.false_positives = dets.size() - s.true_positives;
    s.false_negatives = truth.instances.size() - s.true_positives;
    s.recall = truth.instances.empty() ? 1.0 : double(s.true_positives) / double(truth.instances.size());
    s.precision = dets.empty() ? 1.0 : double(s.true_positives) / double(dets.size());
    return s;
}

/// Maps learned class labels onto glyph ids, maximizing the number of
/// detections that sit within tolerance of a truth instance of the mapped glyph.
/// Each glyph receives at most one class; unmapped classes get `glyph count`.
inline std::vector<std::size_t> align_classes(std::span<const Detection> detections, const GroundTruth& truth,
                                              std::size_t num_classes, double tolerance) {
    const std::size_t G = truth.glyph_names.size();
    std::vector<std::vector<std::size_t>> votes(num_classes, std::vector<std::size_t>(G, 0));
    for (const auto& d : detections) {
        if (d.class_index >= num_classes) continue;
        for (const auto& inst : truth.instances) {
            if (std::max(std::abs(d.row - inst.center_row), std::abs(d.col - inst.center_col)) <= tolerance) {
                ++votes[d.class_index][inst.glyph_id];
                break;
            }
        }
    }
    std::vector<std::size_t> best(num_classes, G), current(num_classes, G);
    std::size_t best_total = 0;
    std::vector<bool> taken(G, false);
    std::function<void(std::size_t, std::size_t)> search = [&](std::size_t c, std::size_t total) {
        if (c == num_classes) {
            if (total > best_total) {
                best_total = total;
                best = current;
            }
            return;
        }
        current[c] = G;
        search(c + 1, total);
        for (std::size_t g = 0; g < G; ++g) {
            if (taken[g] || votes[c][g] == 0) continue;
            taken[g] = true;
            current[c] = g;
            search(c + 1, total + votes[c][g]);
            taken[g] = false;
        }
        current[c] = G;
    };
    search(0, 0);
    return best;
}

}  // namespace docclean
