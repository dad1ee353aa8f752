#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "docclean/background.hpp"
#include "docclean/features.hpp"
#include "docclean/model.hpp"

namespace docclean::testing {

/// Grid with i.i.d. uniform features in [lo, hi).
inline FeatureGrid uniform_grid(GridShape dims, std::size_t F, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    FeatureGrid g(dims, F);
    for (double& v : g.values) v = u(rng);
    return g;
}

/// Background fitted on a few uniform grids.
inline BackgroundDensity uniform_background(GridShape dims, std::size_t F, std::mt19937_64& rng, std::size_t bins = 8) {
    std::vector<FeatureGrid> data;
    for (int k = 0; k < 20; ++k) data.push_back(uniform_grid(dims, F, rng));
    return fit_background(data, bins);
}

/// Random valid parameters with masks strictly inside (0,1).
inline ModelParams random_params(std::size_t C, GridShape D, GridShape P, std::size_t F, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    ModelParams m(C, D, P, F);
    double total = 0.0;
    for (double& p : m.pi) total += (p = 0.2 + u(rng));
    for (double& p : m.pi) p /= total;
    for (double& w : m.means) w = u(rng);
    for (double& v : m.variances) v = 0.01 + 0.1 * u(rng);
    for (double& a : m.masks) a = 0.05 + 0.9 * u(rng);
    return m;
}

}  // namespace docclean::testing
