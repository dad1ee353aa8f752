// Draws RGB patches from a known three-class model, learns a model back from
// them and prints how far the learned means are from the generating ones.
//
//   recover_patterns [seed]

#include <cstdio>
#include <random>
#include <string>

#include "docclean/docclean.hpp"

using namespace docclean;

int main(int argc, char** argv) {
    const std::uint64_t seed = argc > 1 ? std::stoull(argv[1]) : 1;
    const GridShape D{20, 20};
    const std::size_t C = 3;

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    ModelParams truth(C, D, D, 3);
    for (double& w : truth.means) w = 1.0 + u(rng);
    for (double& v : truth.variances) v = 0.01;
    for (double& a : truth.masks) a = u(rng) < 0.5 ? 0.95 : 0.05;

    // Background colours are uniform on [0, 3] in every channel.
    HistogramDensity flat;
    for (int b = 0; b <= 30; ++b) flat.edges.push_back(0.1 * b);
    flat.densities.assign(30, 1.0 / 3.0);
    flat.floor_density = 1e-6;
    const BackgroundDensity generator(std::vector<HistogramDensity>(3, flat));

    std::vector<FeatureGrid> data;
    for (std::size_t n = 0; n < 500; ++n) data.push_back(sample_patch(truth, generator, derive_seed(seed, 99, n)).first);

    const auto bg = fit_background(data);
    LearnConfig config;
    config.num_classes = C;
    config.pattern_dims = D;
    config.restarts = 1;
    config.rng_seed = seed;
    config.selection.lambda = 50;
    const auto result = run_em(data, config, bg, 0, [](const IterationRecord& r) {
        if (r.iteration % 10 == 0) std::printf("iteration %3zu  free energy %.2f\n", r.iteration, r.free_energy);
    });

    std::printf("%zu iterations, %s\n", result.iterations, result.converged ? "converged" : "hit the iteration limit");
    for (std::size_t c = 0; c < C; ++c)
        std::printf("class %zu  pi %.3f  mean mask %.3f\n", c, result.params.pi[c], result.params.mean_mask(c));
    return 0;
}
