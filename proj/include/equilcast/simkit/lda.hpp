#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "../error.hpp"

namespace equilcast::simkit {

struct LdaProjection {
    Eigen::MatrixXd axes;             // d x 2, columns are discriminant directions
    Eigen::Vector2d eigenvalues;      // generalized eigenvalues of the two axes
    std::vector<std::array<double, 2>> points;
};

/// Fisher LDA onto two axes: solves S_b v = mu (S_w + ridge I) v and keeps the
/// two largest eigenpairs. Eigenvectors are S_w-normalized; each axis is signed
/// so its largest-magnitude component is positive.
///
/// ridge < 0 selects a default of 1e-9 * trace(S_w) / d (absolute 1e-12 when
/// S_w vanishes).
template <typename Label>
LdaProjection lda_project(const std::vector<Eigen::VectorXd>& samples, const std::vector<Label>& labels,
                          double ridge = -1.0) {
    require(samples.size() == labels.size(), ErrorKind::ShapeMismatch, "one label per sample required");
    require(!samples.empty(), ErrorKind::InvalidArgument, "lda_project needs samples");
    const Eigen::Index d = samples.front().size();
    require(d >= 2, ErrorKind::InvalidArgument, "lda_project needs at least 2 features");

    std::map<Label, std::vector<std::size_t>> classes;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        require(samples[i].size() == d, ErrorKind::ShapeMismatch, "samples must share one dimension");
        classes[labels[i]].push_back(i);
    }
    if (classes.size() < 2) fail(ErrorKind::NoDiscriminant, "lda_project needs >= 2 classes");
    for (const auto& [label, members] : classes)
        require(members.size() >= 2, ErrorKind::InvalidArgument, "every class needs >= 2 members");

    Eigen::VectorXd overall = Eigen::VectorXd::Zero(d);
    for (const auto& x : samples) overall += x;
    overall /= static_cast<double>(samples.size());

    Eigen::MatrixXd within = Eigen::MatrixXd::Zero(d, d);
    Eigen::MatrixXd between = Eigen::MatrixXd::Zero(d, d);
    for (const auto& [label, members] : classes) {
        Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
        for (auto i : members) mean += samples[i];
        mean /= static_cast<double>(members.size());
        for (auto i : members) {
            const Eigen::VectorXd r = samples[i] - mean;
            within.noalias() += r * r.transpose();
        }
        const Eigen::VectorXd m = mean - overall;
        between.noalias() += static_cast<double>(members.size()) * m * m.transpose();
    }
    if (ridge < 0.0) {
        const double tr = within.trace();
        ridge = tr > 0.0 ? 1e-9 * tr / static_cast<double>(d) : 1e-12;
    }
    within.diagonal().array() += ridge;

    Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> solver(between, within);
    require(solver.info() == Eigen::Success, ErrorKind::NoDiscriminant, "generalized eigensolve failed");

    LdaProjection out;
    out.axes.resize(d, 2);
    for (int k = 0; k < 2; ++k) {
        // Eigen sorts eigenvalues ascending.
        const Eigen::Index col = d - 1 - k;
        Eigen::VectorXd v = solver.eigenvectors().col(col);
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0.0) v = -v;
        out.axes.col(k) = v;
        out.eigenvalues(k) = solver.eigenvalues()(col);
    }
    out.points.reserve(samples.size());
    for (const auto& x : samples) {
        const Eigen::Vector2d y = out.axes.transpose() * x;
        out.points.push_back({y(0), y(1)});
    }
    return out;
}

}  // namespace equilcast::simkit
