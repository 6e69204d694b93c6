#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include <Eigen/Core>

#include "../error.hpp"
#include "parameters.hpp"

namespace equilcast::neural {

inline double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct ProbabilisticForecast {
    Eigen::VectorXd mu;
    Eigen::VectorXd var;

    Eigen::Index size() const { return mu.size(); }
};

// Batched sequences are stored time-major: a (features x T*B) matrix whose
// column t*B + b holds step t of sequence b.

struct LayerCache {
    Eigen::MatrixXd gates;      // 4H x TB, post-activation
    Eigen::MatrixXd cell;       // H x TB
    Eigen::MatrixXd tanh_cell;  // H x TB
    Eigen::MatrixXd hidden;     // H x TB
};

struct ForwardCache {
    Eigen::Index steps = 0;
    Eigen::Index batch = 0;
    Eigen::MatrixXd input;        // in x TB
    std::vector<LayerCache> layers;
    Eigen::MatrixXd head;         // 2 x TB, pre-activation
    Eigen::RowVectorXd mu;        // TB
    Eigen::RowVectorXd var;       // TB
    Eigen::RowVectorXd var_free;  // 1 where var is above the floor
};

namespace detail {

inline void lstm_layer_forward(const Eigen::MatrixXd& input, Eigen::Ref<const Eigen::MatrixXd> w_in,
                               Eigen::Ref<const Eigen::MatrixXd> w_rec, Eigen::Ref<const Eigen::MatrixXd> bias,
                               Eigen::Index steps, Eigen::Index batch, LayerCache& cache) {
    const Eigen::Index h = w_rec.cols();
    const Eigen::Index tb = steps * batch;
    cache.gates.noalias() = w_in * input;
    cache.gates.colwise() += bias.col(0);
    cache.cell.resize(h, tb);
    cache.tanh_cell.resize(h, tb);
    cache.hidden.resize(h, tb);
    for (Eigen::Index t = 0; t < steps; ++t) {
        auto z = cache.gates.middleCols(t * batch, batch);
        if (t > 0) z.noalias() += w_rec * cache.hidden.middleCols((t - 1) * batch, batch);
        z.topRows(2 * h) = z.topRows(2 * h).unaryExpr([](double v) { return sigmoid(v); });
        z.middleRows(2 * h, h) = z.middleRows(2 * h, h).array().tanh().matrix();
        z.bottomRows(h) = z.bottomRows(h).unaryExpr([](double v) { return sigmoid(v); });
        auto c = cache.cell.middleCols(t * batch, batch);
        c = z.topRows(h).cwiseProduct(z.middleRows(2 * h, h));
        if (t > 0) c += z.middleRows(h, h).cwiseProduct(cache.cell.middleCols((t - 1) * batch, batch));
        auto tc = cache.tanh_cell.middleCols(t * batch, batch);
        tc = c.array().tanh().matrix();
        cache.hidden.middleCols(t * batch, batch) = z.bottomRows(h).cwiseProduct(tc);
    }
}

}  // namespace detail

/// Forward pass over a batch. `input` is (input_dim x steps*batch), time-major.
inline ForwardCache forward_batch(const NetworkParameters& params, const Eigen::MatrixXd& input, Eigen::Index steps,
                                  Eigen::Index batch) {
    const auto& cfg = params.config();
    require(steps >= 1 && batch >= 1 && input.rows() == cfg.input_dim && input.cols() == steps * batch,
            ErrorKind::ShapeMismatch, "forward: input shape does not match config, steps and batch");
    require(input.allFinite(), ErrorKind::NonFiniteInput, "forward: input contains non-finite values");
    ForwardCache cache;
    cache.steps = steps;
    cache.batch = batch;
    cache.input = input;
    cache.layers.resize(params.num_layers());
    for (std::size_t l = 0; l < params.num_layers(); ++l) {
        const Eigen::MatrixXd& x = l == 0 ? cache.input : cache.layers[l - 1].hidden;
        detail::lstm_layer_forward(x, params.w_input(l), params.w_recurrent(l), params.bias(l), steps, batch,
                                   cache.layers[l]);
    }
    cache.head.noalias() = params.head_weight() * cache.layers.back().hidden;
    cache.head.colwise() += params.head_bias().col(0);
    const double floor = cfg.variance_floor;
    cache.mu = cache.head.row(0).unaryExpr([](double v) { return softplus(v); });
    cache.var.resize(steps * batch);
    cache.var_free.resize(steps * batch);
    for (Eigen::Index k = 0; k < steps * batch; ++k) {
        const double v = softplus(cache.head(1, k));
        cache.var_free(k) = v > floor ? 1.0 : 0.0;
        cache.var(k) = v > floor ? v : floor;
    }
    return cache;
}

/// Forecast of sequence b in a batched cache.
inline ProbabilisticForecast extract_forecast(const ForwardCache& cache, Eigen::Index b) {
    ProbabilisticForecast f;
    f.mu.resize(cache.steps);
    f.var.resize(cache.steps);
    for (Eigen::Index t = 0; t < cache.steps; ++t) {
        f.mu(t) = cache.mu(t * cache.batch + b);
        f.var(t) = cache.var(t * cache.batch + b);
    }
    return f;
}

/// Single LSTM layer on one sequence (T x d, zero initial state) -> T x H.
inline Eigen::MatrixXd lstm_forward(const Eigen::MatrixXd& sequence, const NetworkParameters& params,
                                    std::size_t layer = 0) {
    require(layer < params.num_layers(), ErrorKind::InvalidArgument, "lstm_forward: no such layer");
    require(sequence.cols() == params.w_input(layer).cols(), ErrorKind::ShapeMismatch,
            "lstm_forward: sequence width does not match layer input size");
    require(sequence.allFinite(), ErrorKind::NonFiniteInput, "lstm_forward: input contains non-finite values");
    LayerCache cache;
    const Eigen::MatrixXd x = sequence.transpose();
    detail::lstm_layer_forward(x, params.w_input(layer), params.w_recurrent(layer), params.bias(layer),
                               sequence.rows(), 1, cache);
    return cache.hidden.transpose();
}

/// Causal forecast for one sequence (T x input_dim, any T >= 1).
inline ProbabilisticForecast network_forward(const Eigen::Ref<const Eigen::MatrixXd>& sequence,
                                             const NetworkParameters& params) {
    require(sequence.rows() >= 1, ErrorKind::InvalidArgument, "network_forward: empty sequence");
    const Eigen::MatrixXd x = sequence.transpose();
    return extract_forecast(forward_batch(params, x, sequence.rows(), 1), 0);
}

inline double gaussian_nll(double y, double mu, double var) {
    const double r = y - mu;
    return 0.5 * std::log(2.0 * std::numbers::pi * var) + r * r / (2.0 * var);
}

/// Mean over timesteps of the Gaussian negative log-likelihood of a scalar target.
inline double nll_loss(const ProbabilisticForecast& f, double target) {
    require(f.mu.size() == f.var.size() && f.mu.size() >= 1, ErrorKind::ShapeMismatch,
            "nll_loss: mu and var must be nonempty and of equal length");
    double s = 0.0;
    for (Eigen::Index t = 0; t < f.mu.size(); ++t) s += gaussian_nll(target, f.mu(t), f.var(t));
    return s / static_cast<double>(f.mu.size());
}

/// Batch loss: mean over every (step, sequence) pair.
inline double batch_loss(const ForwardCache& cache, const Eigen::VectorXd& targets) {
    require(targets.size() == cache.batch, ErrorKind::ShapeMismatch, "batch_loss: one target per sequence");
    double s = 0.0;
    for (Eigen::Index k = 0; k < cache.mu.size(); ++k)
        s += gaussian_nll(targets(k % cache.batch), cache.mu(k), cache.var(k));
    return s / static_cast<double>(cache.mu.size());
}

struct GradientResult {
    double loss = 0.0;
    Eigen::VectorXd gradient;
    double norm = 0.0;  // before clipping
    bool clipped = false;
};

/// Rescales `g` to global norm `max_norm` when it exceeds it.
inline bool clip_global_norm(Eigen::VectorXd& g, double max_norm, double* norm_out = nullptr) {
    const double n = g.norm();
    if (norm_out) *norm_out = n;
    if (n > max_norm && std::isfinite(n)) {
        g *= max_norm / n;
        return true;
    }
    return false;
}

/// Exact gradient of batch_loss via backpropagation through time. A positive
/// `clip_norm` applies global-norm clipping.
inline GradientResult backward(const ForwardCache& cache, const NetworkParameters& params,
                               const Eigen::VectorXd& targets, double clip_norm = 0.0) {
    require(targets.size() == cache.batch, ErrorKind::ShapeMismatch, "backward: one target per sequence");
    const Eigen::Index steps = cache.steps, batch = cache.batch, tb = steps * batch;
    NetworkParameters grad(params.config());
    GradientResult out;
    out.loss = batch_loss(cache, targets);

    // Head: d/dz of softplus is the logistic function.
    const double scale = 1.0 / static_cast<double>(tb);
    Eigen::MatrixXd d_head(2, tb);
    for (Eigen::Index k = 0; k < tb; ++k) {
        const double y = targets(k % batch), mu = cache.mu(k), var = cache.var(k);
        const double r = mu - y;
        const double d_mu = r / var;
        const double d_var = 0.5 / var - 0.5 * r * r / (var * var);
        d_head(0, k) = scale * d_mu * sigmoid(cache.head(0, k));
        d_head(1, k) = scale * d_var * sigmoid(cache.head(1, k)) * cache.var_free(k);
    }
    grad.head_weight().noalias() = d_head * cache.layers.back().hidden.transpose();
    grad.head_bias().col(0) = d_head.rowwise().sum();
    Eigen::MatrixXd d_hidden = params.head_weight().transpose() * d_head;

    for (std::size_t l = params.num_layers(); l-- > 0;) {
        const LayerCache& lc = cache.layers[l];
        const Eigen::Index h = params.hidden_size(l);
        const auto w_rec = params.w_recurrent(l);
        Eigen::MatrixXd dz(4 * h, tb);
        Eigen::MatrixXd dh_next = Eigen::MatrixXd::Zero(h, batch);
        Eigen::MatrixXd dc_next = Eigen::MatrixXd::Zero(h, batch);
        Eigen::MatrixXd dh(h, batch), dc(h, batch);
        for (Eigen::Index t = steps; t-- > 0;) {
            const auto z = lc.gates.middleCols(t * batch, batch);
            const auto ig = z.topRows(h).array();
            const auto fg = z.middleRows(h, h).array();
            const auto gg = z.middleRows(2 * h, h).array();
            const auto og = z.bottomRows(h).array();
            const auto tc = lc.tanh_cell.middleCols(t * batch, batch).array();
            dh = d_hidden.middleCols(t * batch, batch) + dh_next;
            dc.array() = dh.array() * og * (1.0 - tc * tc) + dc_next.array();
            auto dzt = dz.middleCols(t * batch, batch);
            dzt.topRows(h).array() = dc.array() * gg * ig * (1.0 - ig);
            if (t > 0)
                dzt.middleRows(h, h).array() =
                    dc.array() * lc.cell.middleCols((t - 1) * batch, batch).array() * fg * (1.0 - fg);
            else
                dzt.middleRows(h, h).setZero();
            dzt.middleRows(2 * h, h).array() = dc.array() * ig * (1.0 - gg * gg);
            dzt.bottomRows(h).array() = dh.array() * tc * og * (1.0 - og);
            dc_next.array() = dc.array() * fg;
            dh_next.noalias() = w_rec.transpose() * dzt;
        }
        const Eigen::MatrixXd& x = l == 0 ? cache.input : cache.layers[l - 1].hidden;
        grad.w_input(l).noalias() = dz * x.transpose();
        if (steps > 1)
            grad.w_recurrent(l).noalias() =
                dz.rightCols(tb - batch) * lc.hidden.leftCols(tb - batch).transpose();
        grad.bias(l).col(0) = dz.rowwise().sum();
        if (l > 0) d_hidden.noalias() = params.w_input(l).transpose() * dz;
    }

    out.gradient = std::move(grad.values());
    if (clip_norm > 0.0)
        out.clipped = clip_global_norm(out.gradient, clip_norm, &out.norm);
    else
        out.norm = out.gradient.norm();
    return out;
}

}  // namespace equilcast::neural
