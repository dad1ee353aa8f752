// Renders a small dirty page, learns its glyph classes, cleans it and scores
// the result against the page's ground truth.
//
//   clean_synthetic_page [out_dir]

#include <cstdio>
#include <filesystem>

#include "docclean/docclean.hpp"

using namespace docclean;

int main(int argc, char** argv) {
    const std::filesystem::path out = argc > 1 ? argv[1] : ".";

    DocumentSpec spec;
    spec.width = 300;
    spec.height = 300;
    spec.instances_per_glyph = 30;
    spec.slot_height = 24;
    spec.slot_width = 18;
    spec.strokes = {StrokeDirt{8}};
    spec.spots = {SpotDirt{8}};
    spec.seed = 5;
    const auto [page, truth] = render_document(spec);
    write_image(page, out / "dirty.png");

    FeaturePipeline pipe;
    pipe.patch_size = {32, 28};
    pipe.stride = {16, 16};
    pipe.subsample = 2;
    pipe.gabor = {4, 2, 9, 3.0, GaborResponse::real};
    const auto data = page_features(page, pipe, pipe.stride);
    const auto bg = fit_background(data);

    LearnConfig config;
    config.num_classes = 5;
    config.pattern_dims = {8, 6};
    config.restarts = 4;
    config.rng_seed = 1;
    const auto learned = multi_restart(data, config, bg);
    std::printf("kept restart %zu with %zu character classes\n", learned.best_index,
                learned.characters_per_restart[learned.best_index]);

    const auto [clean, report] = clean_document(page, learned.best.params, bg, pipe, CleanConfig{});
    write_image(clean, out / "clean.png");

    auto detections = detections_from(report);
    const double tolerance = 3.0 * double(pipe.subsample);
    const auto mapping = align_classes(detections, truth, config.num_classes, tolerance);
    for (auto& d : detections) d.class_index = mapping[d.class_index];
    const auto score = score_cleaning(detections, truth, tolerance);
    std::printf("%zu passes, recall %.3f, precision %.3f\n", report.passes, score.recall, score.precision);
    return 0;
}
