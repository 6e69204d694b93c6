#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "../error.hpp"
#include "config.hpp"

namespace equilcast::neural {

struct TensorInfo {
    std::string name;
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    Eigen::Index offset = 0;

    Eigen::Index size() const { return rows * cols; }
    bool operator==(const TensorInfo&) const = default;
};

/// Gate rows are stacked in the order input, forget, candidate, output.
enum Gate : int { kInputGate = 0, kForgetGate = 1, kCandidateGate = 2, kOutputGate = 3 };

/// All trainable weights in one flat vector. Tensors are column-major views
/// into `values`; per layer: w_input (4H x in), w_recurrent (4H x H),
/// bias (4H); then head.weight (2 x H_last) and head.bias (2).
class NetworkParameters {
public:
    NetworkParameters() = default;

    explicit NetworkParameters(NetworkConfig config) : config_(std::move(config)) {
        validate(config_);
        Eigen::Index offset = 0;
        auto add = [&](std::string name, Eigen::Index r, Eigen::Index c) {
            layout_.push_back({std::move(name), r, c, offset});
            offset += r * c;
        };
        int in = config_.input_dim;
        for (std::size_t l = 0; l < config_.lstm_layer_sizes.size(); ++l) {
            const int h = config_.lstm_layer_sizes[l];
            const std::string p = "lstm" + std::to_string(l);
            add(p + ".w_input", 4 * h, in);
            add(p + ".w_recurrent", 4 * h, h);
            add(p + ".bias", 4 * h, 1);
            in = h;
        }
        add("head.weight", 2, in);
        add("head.bias", 2, 1);
        values_ = Eigen::VectorXd::Zero(offset);
    }

    const NetworkConfig& config() const { return config_; }
    const std::vector<TensorInfo>& layout() const { return layout_; }
    std::size_t num_layers() const { return config_.lstm_layer_sizes.size(); }
    int hidden_size(std::size_t layer) const { return config_.lstm_layer_sizes.at(layer); }

    Eigen::VectorXd& values() { return values_; }
    const Eigen::VectorXd& values() const { return values_; }
    Eigen::Index size() const { return values_.size(); }

    using MatrixView = Eigen::Map<Eigen::MatrixXd>;
    using ConstMatrixView = Eigen::Map<const Eigen::MatrixXd>;

    ConstMatrixView tensor(std::size_t k) const {
        const auto& t = layout_.at(k);
        return {values_.data() + t.offset, t.rows, t.cols};
    }
    MatrixView tensor(std::size_t k) {
        const auto& t = layout_.at(k);
        return {values_.data() + t.offset, t.rows, t.cols};
    }

    // Layer-indexed accessors.
    ConstMatrixView w_input(std::size_t l) const { return tensor(3 * l); }
    ConstMatrixView w_recurrent(std::size_t l) const { return tensor(3 * l + 1); }
    ConstMatrixView bias(std::size_t l) const { return tensor(3 * l + 2); }
    ConstMatrixView head_weight() const { return tensor(3 * num_layers()); }
    ConstMatrixView head_bias() const { return tensor(3 * num_layers() + 1); }
    MatrixView w_input(std::size_t l) { return tensor(3 * l); }
    MatrixView w_recurrent(std::size_t l) { return tensor(3 * l + 1); }
    MatrixView bias(std::size_t l) { return tensor(3 * l + 2); }
    MatrixView head_weight() { return tensor(3 * num_layers()); }
    MatrixView head_bias() { return tensor(3 * num_layers() + 1); }

    bool all_finite() const { return values_.allFinite(); }

    bool operator==(const NetworkParameters& o) const {
        return config_ == o.config_ && layout_ == o.layout_ && values_ == o.values_;
    }

private:
    NetworkConfig config_;
    std::vector<TensorInfo> layout_;
    Eigen::VectorXd values_;
};

inline constexpr double kForgetBiasInit = 1.0;

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights with fan_in = in + H for
/// LSTM layers; biases zero except the forget gate.
inline NetworkParameters initialize_parameters(const NetworkConfig& config, std::uint64_t seed) {
    NetworkParameters p(config);
    std::mt19937_64 rng(seed);
    auto fill = [&](auto view, double bound) {
        std::uniform_real_distribution<double> u(-bound, bound);
        for (Eigen::Index c = 0; c < view.cols(); ++c)
            for (Eigen::Index r = 0; r < view.rows(); ++r) view(r, c) = u(rng);
    };
    int in = config.input_dim;
    for (std::size_t l = 0; l < p.num_layers(); ++l) {
        const int h = p.hidden_size(l);
        const double bound = 1.0 / std::sqrt(static_cast<double>(in + h));
        fill(p.w_input(l), bound);
        fill(p.w_recurrent(l), bound);
        auto b = p.bias(l);
        b.setZero();
        b.middleRows(kForgetGate * h, h).setConstant(kForgetBiasInit);
        in = h;
    }
    fill(p.head_weight(), 1.0 / std::sqrt(static_cast<double>(in)));
    p.head_bias().setZero();
    return p;
}

/// Rounds every weight to the nearest float32, so an in-memory model equals
/// the one read back from its model file.
inline void quantize_to_float(NetworkParameters& p) {
    for (Eigen::Index i = 0; i < p.size(); ++i)
        p.values()(i) = static_cast<double>(static_cast<float>(p.values()(i)));
}

}  // namespace equilcast::neural
