#pragma once

#include <utility>

namespace umesh {

/// Isotropic Saint-Venant-Kirchhoff material constants.
struct MaterialParams {
    double young_modulus = 0.0;   // Y (Pa)
    double poisson_ratio = 0.0;   // nu
    double lame_lambda = 0.0;     // lambda (Pa)
    double lame_mu = 0.0;         // mu (Pa)

    static MaterialParams from_young_poisson(double young, double poisson);
};

/// lambda = Y*nu/((1+nu)(1-2nu)), mu = Y/(2(1+nu)). Rejects Y <= 0 and
/// nu outside (0 <= nu < 0.5); the incompressible limit has no finite lambda.
std::pair<double, double> lame_constants(double young, double poisson);

}  // namespace umesh
