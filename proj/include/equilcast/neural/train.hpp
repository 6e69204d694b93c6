#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "../error.hpp"
#include "adam.hpp"
#include "config.hpp"
#include "network.hpp"
#include "parameters.hpp"

namespace equilcast::neural {

/// Equal-length univariate sequences, one per column, with their scalar targets.
struct SequenceSet {
    Eigen::MatrixXd inputs;  // T x N
    Eigen::VectorXd targets;
    std::vector<std::string> ids;

    Eigen::Index count() const { return inputs.cols(); }
    Eigen::Index steps() const { return inputs.rows(); }
};

/// Builds a set whose target is the final element of each sequence.
inline SequenceSet make_sequence_set(const std::vector<Eigen::VectorXd>& sequences, std::vector<std::string> ids = {}) {
    SequenceSet s;
    if (sequences.empty()) return s;
    const Eigen::Index t = sequences.front().size();
    s.inputs.resize(t, static_cast<Eigen::Index>(sequences.size()));
    s.targets.resize(static_cast<Eigen::Index>(sequences.size()));
    for (std::size_t i = 0; i < sequences.size(); ++i) {
        require(sequences[i].size() == t && t >= 1, ErrorKind::ShapeMismatch, "sequences differ in length");
        s.inputs.col(static_cast<Eigen::Index>(i)) = sequences[i];
        s.targets(static_cast<Eigen::Index>(i)) = sequences[i](t - 1);
    }
    if (ids.empty())
        for (std::size_t i = 0; i < sequences.size(); ++i) ids.push_back(std::to_string(i));
    require(ids.size() == sequences.size(), ErrorKind::ShapeMismatch, "one id per sequence required");
    s.ids = std::move(ids);
    return s;
}

/// Time-major (1 x T*B) input block for the listed columns.
inline Eigen::MatrixXd gather_batch(const SequenceSet& set, const std::vector<Eigen::Index>& cols) {
    const Eigen::Index b = static_cast<Eigen::Index>(cols.size());
    Eigen::MatrixXd x(1, set.steps() * b);
    for (Eigen::Index t = 0; t < set.steps(); ++t)
        for (Eigen::Index j = 0; j < b; ++j) x(0, t * b + j) = set.inputs(t, cols[static_cast<std::size_t>(j)]);
    return x;
}

inline Eigen::VectorXd gather_targets(const SequenceSet& set, const std::vector<Eigen::Index>& cols) {
    Eigen::VectorXd y(static_cast<Eigen::Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j) y(static_cast<Eigen::Index>(j)) = set.targets(cols[j]);
    return y;
}

/// Mean per-step NLL over a whole set, evaluated in chunks.
inline double evaluate_nll(const NetworkParameters& params, const SequenceSet& set, Eigen::Index chunk = 64) {
    require(set.count() >= 1, ErrorKind::InvalidArgument, "evaluate_nll: empty set");
    double total = 0.0;
    for (Eigen::Index start = 0; start < set.count(); start += chunk) {
        std::vector<Eigen::Index> cols;
        for (Eigen::Index j = start; j < std::min(set.count(), start + chunk); ++j) cols.push_back(j);
        const auto cache = forward_batch(params, gather_batch(set, cols), set.steps(), static_cast<Eigen::Index>(cols.size()));
        total += batch_loss(cache, gather_targets(set, cols)) * static_cast<double>(cols.size());
    }
    return total / static_cast<double>(set.count());
}

/// Per-sequence forecasts for a whole set.
inline std::vector<ProbabilisticForecast> forecast_set(const NetworkParameters& params, const SequenceSet& set,
                                                       Eigen::Index chunk = 64) {
    std::vector<ProbabilisticForecast> out;
    out.reserve(static_cast<std::size_t>(set.count()));
    for (Eigen::Index start = 0; start < set.count(); start += chunk) {
        std::vector<Eigen::Index> cols;
        for (Eigen::Index j = start; j < std::min(set.count(), start + chunk); ++j) cols.push_back(j);
        const auto cache = forward_batch(params, gather_batch(set, cols), set.steps(), static_cast<Eigen::Index>(cols.size()));
        for (Eigen::Index j = 0; j < cache.batch; ++j) out.push_back(extract_forecast(cache, j));
    }
    return out;
}

struct TrainingLog {
    std::uint64_t seed = 0;
    std::vector<double> train_loss;  // mean batch loss per epoch
    std::vector<double> val_loss;
    int best_epoch = -1;             // 0-based
    double best_val_loss = std::numeric_limits<double>::infinity();
    std::vector<std::string> training_ids;  // sorted

    bool operator==(const TrainingLog&) const = default;
};

struct TrainedLearner {
    NetworkParameters params;
    TrainingLog log;
};

/// Seeded init, per-epoch reshuffle, Adam on the batch NLL with global-norm
/// clipping. Keeps the parameters of the best validation epoch (training loss
/// when the validation set is empty).
inline TrainedLearner train_base_learner(const SequenceSet& train, const SequenceSet& validation,
                                         const NetworkConfig& net, const TrainConfig& cfg, std::uint64_t seed) {
    validate(net);
    validate(cfg);
    require(train.count() >= 1, ErrorKind::InvalidArgument, "train_base_learner: empty training split");
    require(net.input_dim == 1, ErrorKind::InvalidArgument, "train_base_learner: univariate sequences only");
    require(train.steps() == net.sequence_length, ErrorKind::ShapeMismatch,
            "train_base_learner: training sequence length differs from config");
    require(validation.count() == 0 || validation.steps() == net.sequence_length, ErrorKind::ShapeMismatch,
            "train_base_learner: validation sequence length differs from config");

    std::mt19937_64 rng(seed);
    TrainedLearner best;
    best.params = initialize_parameters(net, rng());
    best.log.seed = seed;
    best.log.training_ids = train.ids;
    std::sort(best.log.training_ids.begin(), best.log.training_ids.end());

    NetworkParameters params = best.params;
    AdamMoments moments(params.size());
    const AdamConfig adam = cfg.adam();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(train.count()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    int since_best = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            const std::vector<Eigen::Index> cols(order.begin() + static_cast<std::ptrdiff_t>(start),
                                                 order.begin() + static_cast<std::ptrdiff_t>(stop));
            const auto cache = forward_batch(params, gather_batch(train, cols), train.steps(),
                                             static_cast<Eigen::Index>(cols.size()));
            auto g = backward(cache, params, gather_targets(train, cols), cfg.gradient_clip_norm);
            if (!std::isfinite(g.loss) || !g.gradient.allFinite())
                fail(ErrorKind::TrainingDiverged, "non-finite loss at epoch " + std::to_string(epoch + 1));
            adam_step(params.values(), g.gradient, moments, adam);
            loss_sum += g.loss * static_cast<double>(cols.size());
        }
        const double train_loss = loss_sum / static_cast<double>(order.size());
        const double val_loss = validation.count() > 0 ? evaluate_nll(params, validation) : train_loss;
        if (!std::isfinite(val_loss) || !params.all_finite())
            fail(ErrorKind::TrainingDiverged, "non-finite validation loss at epoch " + std::to_string(epoch + 1));
        best.log.train_loss.push_back(train_loss);
        best.log.val_loss.push_back(val_loss);
        if (val_loss < best.log.best_val_loss) {
            best.log.best_val_loss = val_loss;
            best.log.best_epoch = epoch;
            best.params = params;
            since_best = 0;
        } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
            break;
        }
    }
    return best;
}

}  // namespace equilcast::neural
