#include "umesh/material.hpp"

#include "umesh/errors.hpp"

namespace umesh {

std::pair<double, double> lame_constants(double young, double poisson) {
    if (!(young > 0.0))
        throw ConfigError("young_modulus must be positive");
    if (!(poisson > -1.0 && poisson < 0.5))
        throw ConfigError("poisson_ratio must lie in (-1, 0.5)");
    const double lambda =
        young * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson));
    const double mu = young / (2.0 * (1.0 + poisson));
    return {lambda, mu};
}

MaterialParams MaterialParams::from_young_poisson(double young, double poisson) {
    auto [lambda, mu] = lame_constants(young, poisson);
    return MaterialParams{young, poisson, lambda, mu};
}

}  // namespace umesh
