#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "../error.hpp"
#include "adam.hpp"

namespace equilcast::neural {

/// Stacked LSTM layers (each returning full sequences) followed by a
/// time-distributed dense head with two outputs (mean, variance).
struct NetworkConfig {
    std::vector<int> lstm_layer_sizes{50, 500};
    int input_dim = 1;
    int sequence_length = 250;
    double variance_floor = 1e-6;

    bool operator==(const NetworkConfig&) const = default;
};

inline void validate(const NetworkConfig& c) {
    require(!c.lstm_layer_sizes.empty(), ErrorKind::InvalidArgument, "at least one LSTM layer required");
    for (int h : c.lstm_layer_sizes) require(h > 0, ErrorKind::InvalidArgument, "LSTM layer sizes must be positive");
    require(c.input_dim >= 1, ErrorKind::InvalidArgument, "input_dim must be positive");
    require(c.sequence_length >= 2, ErrorKind::InvalidArgument, "sequence_length must be >= 2");
    require(c.variance_floor > 0.0, ErrorKind::InvalidArgument, "variance_floor must be positive");
}

struct TrainConfig {
    int epochs = 200;
    int batch_size = 16;
    double learning_rate = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    double gradient_clip_norm = 5.0;
    std::uint64_t seed = 0;
    /// Stop after this many epochs without a validation improvement (0 = never).
    int patience = 0;

    AdamConfig adam() const { return {learning_rate, adam_beta1, adam_beta2, adam_epsilon}; }
};

inline void validate(const TrainConfig& c) {
    require(c.epochs > 0 && c.batch_size > 0 && c.learning_rate > 0.0 && c.adam_epsilon > 0.0 &&
                c.gradient_clip_norm > 0.0,
            ErrorKind::InvalidArgument, "train config values must be positive");
    require(c.adam_beta1 > 0.0 && c.adam_beta1 < 1.0 && c.adam_beta2 > 0.0 && c.adam_beta2 < 1.0,
            ErrorKind::InvalidArgument, "adam betas must lie in (0, 1)");
    require(c.patience >= 0, ErrorKind::InvalidArgument, "patience must be non-negative");
}

inline nlohmann::json to_json(const NetworkConfig& c) {
    return {{"lstm_layer_sizes", c.lstm_layer_sizes},
            {"input_dim", c.input_dim},
            {"output_dim", 2},
            {"sequence_length", c.sequence_length},
            {"variance_floor", c.variance_floor}};
}

inline NetworkConfig network_config_from_json(const nlohmann::json& j) {
    NetworkConfig c;
    try {
        c.lstm_layer_sizes = j.at("lstm_layer_sizes").get<std::vector<int>>();
        c.input_dim = j.value("input_dim", 1);
        c.sequence_length = j.at("sequence_length").get<int>();
        c.variance_floor = j.value("variance_floor", 1e-6);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::ParseError, std::string("network config: ") + e.what());
    }
    validate(c);
    return c;
}

inline nlohmann::json to_json(const TrainConfig& c) {
    return {{"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"learning_rate", c.learning_rate},
            {"adam_beta1", c.adam_beta1},
            {"adam_beta2", c.adam_beta2},
            {"adam_epsilon", c.adam_epsilon},
            {"gradient_clip_norm", c.gradient_clip_norm},
            {"seed", c.seed},
            {"patience", c.patience}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
    c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
    c.adam_epsilon = j.value("adam_epsilon", c.adam_epsilon);
    c.gradient_clip_norm = j.value("gradient_clip_norm", c.gradient_clip_norm);
    c.seed = j.value("seed", c.seed);
    c.patience = j.value("patience", c.patience);
    validate(c);
    return c;
}

}  // namespace equilcast::neural
