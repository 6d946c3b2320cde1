#pragma once

#include <cmath>
#include <vector>

#include "umesh/errors.hpp"

namespace umesh::nn {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// One bias-corrected Adam update for a single parameter tensor. t counts
/// from 1. Moment math runs in double regardless of the storage type.
template <typename T>
void adam_step(std::vector<T>& param, const std::vector<T>& grad, std::vector<T>& m,
               std::vector<T>& v, long t, const AdamConfig& cfg) {
    if (t < 1) throw ConfigError("adam_step needs t >= 1");
    if (param.size() != grad.size() || param.size() != m.size() ||
        param.size() != v.size())
        throw ConfigError("adam_step tensor size mismatch");
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = static_cast<double>(grad[i]);
        const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * g;
        const double vi =
            cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * g * g;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        const double mhat = mi / bc1;
        const double vhat = vi / bc2;
        param[i] = static_cast<T>(static_cast<double>(param[i]) -
                                  cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
}

}  // namespace umesh::nn
