#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "transport.hpp"

namespace equilcast::simkit {

/// Multivariate Gaussian over the log10 fitted parameters, truncated to the box
/// when sampled.
struct ParameterDistribution {
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(kFittedCount);
    Eigen::MatrixXd covariance = Eigen::MatrixXd::Zero(kFittedCount, kFittedCount);
    ParameterBox bounds{};
};

inline constexpr std::size_t kMinFitsForDistribution = 7;
inline constexpr int kMaxRejections = 1000;

inline ParameterDistribution fit_param_distribution(const std::vector<SimulationParameters>& fits) {
    if (fits.size() < kMinFitsForDistribution)
        fail(ErrorKind::InsufficientFits, "need >= 7 fitted parameter sets, got " + std::to_string(fits.size()));
    const auto n = static_cast<Eigen::Index>(fits.size());
    const auto d = static_cast<Eigen::Index>(kFittedCount);
    Eigen::MatrixXd x(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto v = to_log10(fits[static_cast<std::size_t>(i)]);
        for (Eigen::Index j = 0; j < d; ++j) x(i, j) = v[static_cast<std::size_t>(j)];
    }
    ParameterDistribution dist;
    dist.mean = x.colwise().mean().transpose();
    const Eigen::MatrixXd centered = x.rowwise() - dist.mean.transpose();
    Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n - 1);
    cov = (0.5 * (cov + cov.transpose())).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    const Eigen::VectorXd floored = eig.eigenvalues().cwiseMax(0.0);
    dist.covariance = eig.eigenvectors() * floored.asDiagonal() * eig.eigenvectors().transpose();
    dist.covariance = (0.5 * (dist.covariance + dist.covariance.transpose())).eval();
    return dist;
}

/// Draws n parameter sets (c_bulk and film thickness left at defaults).
/// Out-of-box draws are rejected and redrawn, at most 1000 times per sample.
inline std::vector<SimulationParameters> sample_params(const ParameterDistribution& dist, std::size_t n,
                                                       std::uint64_t seed) {
    require(n >= 1, ErrorKind::InvalidArgument, "sample_params needs n >= 1");
    const auto d = static_cast<Eigen::Index>(kFittedCount);
    require(dist.mean.size() == d && dist.covariance.rows() == d && dist.covariance.cols() == d,
            ErrorKind::ShapeMismatch, "parameter distribution must be 6-dimensional");

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (dist.covariance + dist.covariance.transpose()));
    const Eigen::MatrixXd factor =
        eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<SimulationParameters> out;
    out.reserve(n);
    Eigen::VectorXd z(d);
    for (std::size_t s = 0; s < n; ++s) {
        bool accepted = false;
        for (int attempt = 0; attempt < kMaxRejections && !accepted; ++attempt) {
            for (Eigen::Index j = 0; j < d; ++j) z(j) = normal(rng);
            const Eigen::VectorXd x = dist.mean + factor * z;
            FittedVector v{};
            for (Eigen::Index j = 0; j < d; ++j) v[static_cast<std::size_t>(j)] = x(j);
            const auto p = with_log10(SimulationParameters{}, v);
            if (in_box(p, dist.bounds)) {
                out.push_back(p);
                accepted = true;
            }
        }
        if (!accepted)
            fail(ErrorKind::DistributionInfeasible,
                 "no in-box sample after " + std::to_string(kMaxRejections) + " attempts");
    }
    return out;
}

/// Built-in distribution used when no fitted distribution is supplied. Chosen
/// to give hour-scale loading curves across the default concentration grid.
inline ParameterDistribution reference_distribution() {
    ParameterDistribution dist;
    dist.mean << 3.3, -3.3, -6.5, std::log10(25.0), -10.0, std::log10(5.0);
    Eigen::VectorXd sd(kFittedCount);
    sd << 0.25, 0.3, 0.15, 0.04, 0.15, 0.02;
    dist.covariance = sd.cwiseProduct(sd).asDiagonal();
    return dist;
}

// JSON keys follow the field names. Parameter sets are plain SI values;
// distribution moments are in log10 space.

inline nlohmann::json to_json(const SimulationParameters& p) {
    return {{"k_a", p.k_a},       {"k_d", p.k_d},       {"b_max", p.b_max},
            {"d_pore", p.d_pore}, {"d_bulk", p.d_bulk}, {"r_h", p.r_h},
            {"c_bulk", p.c_bulk}, {"film_thickness_um", p.film_thickness_um}};
}

inline SimulationParameters simulation_parameters_from_json(const nlohmann::json& j) {
    SimulationParameters p;
    try {
        p.k_a = j.at("k_a").get<double>();
        p.k_d = j.at("k_d").get<double>();
        p.b_max = j.at("b_max").get<double>();
        p.d_pore = j.at("d_pore").get<double>();
        p.d_bulk = j.at("d_bulk").get<double>();
        p.r_h = j.at("r_h").get<double>();
        p.c_bulk = j.value("c_bulk", 0.0);
        p.film_thickness_um = j.value("film_thickness_um", kDefaultFilmThicknessUm);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::ParseError, std::string("simulation parameters: ") + e.what());
    }
    return p;
}

inline nlohmann::json to_json(const ParameterDistribution& dist) {
    nlohmann::json mean = nlohmann::json::object();
    nlohmann::json cov = nlohmann::json::array();
    nlohmann::json bounds = nlohmann::json::object();
    for (std::size_t i = 0; i < kFittedCount; ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        mean[kFittedNames[i]] = dist.mean(ii);
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(kFittedCount); ++j) row.push_back(dist.covariance(ii, j));
        cov.push_back(row);
        bounds[kFittedNames[i]] = {dist.bounds.lo[i], dist.bounds.hi[i]};
    }
    return {{"space", "log10"},
            {"order", kFittedNames},
            {"mean", mean},
            {"covariance", cov},
            {"bounds", bounds}};
}

inline ParameterDistribution parameter_distribution_from_json(const nlohmann::json& j) {
    ParameterDistribution dist;
    try {
        for (std::size_t i = 0; i < kFittedCount; ++i) {
            const auto ii = static_cast<Eigen::Index>(i);
            dist.mean(ii) = j.at("mean").at(kFittedNames[i]).get<double>();
            const auto& row = j.at("covariance").at(i);
            require(row.size() == kFittedCount, ErrorKind::ParseError, "covariance must be 6x6");
            for (std::size_t k = 0; k < kFittedCount; ++k)
                dist.covariance(ii, static_cast<Eigen::Index>(k)) = row.at(k).get<double>();
            if (j.contains("bounds")) {
                const auto& b = j.at("bounds").at(kFittedNames[i]);
                dist.bounds.lo[i] = b.at(0).get<double>();
                dist.bounds.hi[i] = b.at(1).get<double>();
            }
        }
        require(j.at("covariance").size() == kFittedCount, ErrorKind::ParseError, "covariance must be 6x6");
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::ParseError, std::string("parameter distribution: ") + e.what());
    }
    return dist;
}

}  // namespace equilcast::simkit
