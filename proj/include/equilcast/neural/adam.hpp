#pragma once

#include <cmath>

#include <Eigen/Core>

#include "../error.hpp"

namespace equilcast::neural {

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamMoments {
    Eigen::VectorXd first;
    Eigen::VectorXd second;
    long step = 0;

    explicit AdamMoments(Eigen::Index size = 0)
        : first(Eigen::VectorXd::Zero(size)), second(Eigen::VectorXd::Zero(size)) {}
};

/// One bias-corrected Adam update. `moments.step` is advanced before use, so
/// the first call runs with t = 1.
inline void adam_step(Eigen::Ref<Eigen::VectorXd> params, const Eigen::Ref<const Eigen::VectorXd>& grads,
                      AdamMoments& moments, const AdamConfig& cfg) {
    require(params.size() == grads.size() && params.size() == moments.first.size(),
            ErrorKind::ShapeMismatch, "adam_step: parameter, gradient and moment sizes differ");
    ++moments.step;
    const double t = static_cast<double>(moments.step);
    moments.first = cfg.beta1 * moments.first + (1.0 - cfg.beta1) * grads;
    moments.second = cfg.beta2 * moments.second + (1.0 - cfg.beta2) * grads.cwiseProduct(grads);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    params.array() -= cfg.learning_rate * (moments.first.array() / c1) /
                      ((moments.second.array() / c2).sqrt() + cfg.epsilon);
}

}  // namespace equilcast::neural
