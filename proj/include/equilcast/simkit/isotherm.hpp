#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "../error.hpp"

namespace equilcast::simkit {

/// Redlich-Peterson: q(c) = K c / (1 + a c^g).
struct IsothermParameters {
    double K = 1.0;
    double a = 0.0;
    double g = 1.0;
};

struct IsothermPoint {
    double concentration = 0.0;
    double response = 0.0;
};

struct IsothermFit {
    IsothermParameters params;
    double residual = 0.0;  // sum of squared residuals
};

inline double redlich_peterson(double c, const IsothermParameters& p) {
    if (c <= 0.0) return 0.0;
    return p.K * c / (1.0 + p.a * std::pow(c, p.g));
}

namespace detail {

inline double isotherm_sse(const std::vector<IsothermPoint>& pts, const IsothermParameters& p) {
    double s = 0.0;
    for (const auto& pt : pts) {
        const double r = redlich_peterson(pt.concentration, p) - pt.response;
        s += r * r;
    }
    return s;
}

/// K is linear in the model, so for fixed (a, g) it has a closed form.
inline double best_linear_k(const std::vector<IsothermPoint>& pts, double a, double g) {
    double num = 0.0, den = 0.0;
    for (const auto& pt : pts) {
        if (pt.concentration <= 0.0) continue;
        const double f = pt.concentration / (1.0 + a * std::pow(pt.concentration, g));
        num += f * pt.response;
        den += f * f;
    }
    return den > 0.0 ? num / den : 0.0;
}

inline constexpr double kMinExponent = 1e-3;

/// Levenberg-Marquardt on (K, a, g) with projection onto K > 0, a >= 0, 0 < g <= 1.
inline IsothermFit levenberg_marquardt(const std::vector<IsothermPoint>& pts, IsothermParameters p,
                                       int max_iter = 500) {
    auto project = [](IsothermParameters q) {
        q.K = std::max(q.K, std::numeric_limits<double>::min());
        q.a = std::max(q.a, 0.0);
        q.g = std::clamp(q.g, kMinExponent, 1.0);
        return q;
    };
    p = project(p);
    double sse = isotherm_sse(pts, p);
    double damping = 1e-3;
    const auto m = static_cast<Eigen::Index>(pts.size());
    for (int iter = 0; iter < max_iter; ++iter) {
        Eigen::MatrixXd jac(m, 3);
        Eigen::VectorXd res(m);
        for (Eigen::Index i = 0; i < m; ++i) {
            const double c = pts[static_cast<std::size_t>(i)].concentration;
            if (c <= 0.0) {
                jac.row(i).setZero();
                res(i) = -pts[static_cast<std::size_t>(i)].response;
                continue;
            }
            const double cg = std::pow(c, p.g);
            const double den = 1.0 + p.a * cg;
            const double q = p.K * c / den;
            res(i) = q - pts[static_cast<std::size_t>(i)].response;
            jac(i, 0) = c / den;
            jac(i, 1) = -q * cg / den;
            jac(i, 2) = -q * p.a * cg * std::log(c) / den;
        }
        const Eigen::Matrix3d jtj = jac.transpose() * jac;
        const Eigen::Vector3d jtr = jac.transpose() * res;
        bool improved = false;
        for (int attempt = 0; attempt < 30; ++attempt) {
            Eigen::Matrix3d lhs = jtj;
            for (int d = 0; d < 3; ++d) lhs(d, d) += damping * std::max(jtj(d, d), 1e-30);
            const Eigen::Vector3d delta = lhs.ldlt().solve(-jtr);
            if (!delta.allFinite()) {
                damping *= 10.0;
                continue;
            }
            const auto trial = project({p.K + delta(0), p.a + delta(1), p.g + delta(2)});
            const double trial_sse = isotherm_sse(pts, trial);
            if (trial_sse < sse) {
                const double gain = sse - trial_sse;
                p = trial;
                sse = trial_sse;
                damping = std::max(damping / 3.0, 1e-12);
                improved = gain > 1e-15 * sse;
                break;
            }
            damping *= 4.0;
        }
        if (!improved) break;
    }
    return {p, sse};
}

}  // namespace detail

/// Multi-start least squares fit. Starts span a grid of (a, g) with K set to
/// its closed-form optimum; the best local LM solution wins.
inline IsothermFit fit_isotherm(const std::vector<IsothermPoint>& points) {
    require(points.size() >= 4, ErrorKind::InvalidArgument, "fit_isotherm needs >= 4 points");
    std::set<double> distinct;
    bool any_nonzero = false;
    for (const auto& pt : points) {
        require(pt.concentration >= 0.0 && std::isfinite(pt.response), ErrorKind::InvalidArgument,
                "isotherm points need non-negative concentration and finite response");
        distinct.insert(pt.concentration);
        any_nonzero = any_nonzero || pt.response != 0.0;
    }
    require(distinct.size() >= 3, ErrorKind::InvalidArgument,
            "fit_isotherm needs >= 3 distinct concentrations");
    if (!any_nonzero) fail(ErrorKind::DegenerateFit, "all responses are zero");

    IsothermFit best{{}, std::numeric_limits<double>::infinity()};
    for (double log_a : {-3.0, -2.0, -1.0, 0.0, 1.0, 2.0}) {
        for (double g : {0.3, 0.6, 0.9, 1.0}) {
            const double a = std::pow(10.0, log_a);
            IsothermParameters start{detail::best_linear_k(points, a, g), a, g};
            if (!(start.K > 0.0)) start.K = 1e-6;
            const auto fit = detail::levenberg_marquardt(points, start);
            if (fit.residual < best.residual) best = fit;
        }
    }
    return best;
}

}  // namespace equilcast::simkit
