#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "curve.hpp"
#include "datahub.hpp"
#include "error.hpp"
#include "neural/model_file.hpp"
#include "neural/network.hpp"
#include "neural/train.hpp"
#include "seeding.hpp"

namespace equilcast::ensemble {

using neural::NetworkConfig;
using neural::NetworkParameters;
using neural::ProbabilisticForecast;
using neural::SequenceSet;
using neural::TrainConfig;
using neural::TrainingLog;

struct AggregatedForecast {
    Eigen::VectorXd mu_star;
    Eigen::VectorXd var_star;

    Eigen::Index size() const { return mu_star.size(); }
};

/// Uniform-mixture moments per timestep: mean of the means, and mean member
/// variance plus the dispersion of the member means.
inline AggregatedForecast aggregate(const std::vector<ProbabilisticForecast>& members) {
    require(!members.empty(), ErrorKind::InvalidArgument, "aggregate: no member forecasts");
    const Eigen::Index t = members.front().mu.size();
    for (const auto& m : members)
        require(m.mu.size() == t && m.var.size() == t, ErrorKind::ShapeMismatch,
                "aggregate: member forecasts differ in length");
    const double inv = 1.0 / static_cast<double>(members.size());
    AggregatedForecast out{Eigen::VectorXd::Zero(t), Eigen::VectorXd::Zero(t)};
    for (const auto& m : members) out.mu_star += m.mu;
    out.mu_star *= inv;
    for (const auto& m : members) out.var_star += m.var + (m.mu - out.mu_star).cwiseAbs2();
    out.var_star *= inv;
    return out;
}

inline std::uint64_t member_seed(std::uint64_t master_seed, std::size_t index) {
    return derive_seed(master_seed, 0x4d454d42u, index);
}

struct EnsembleModel {
    NetworkConfig config;
    TrainConfig train_config;
    std::vector<NetworkParameters> members;
    std::vector<std::uint64_t> member_seeds;
    std::vector<TrainingLog> logs;  // may be empty after loading
    std::vector<std::size_t> diverged;
    datahub::MinMaxStats normalizer;
    std::uint64_t master_seed = 0;
    nlohmann::json policy;  // stopping policy, stored opaquely

    std::size_t size() const { return members.size(); }

    /// Nested sub-ensemble made of the first m members.
    EnsembleModel prefix(std::size_t m) const {
        require(m >= 1 && m <= members.size(), ErrorKind::InvalidArgument, "prefix size out of range");
        EnsembleModel out = *this;
        out.members.resize(m);
        out.member_seeds.resize(m);
        if (out.logs.size() > m) out.logs.resize(m);
        return out;
    }
};

/// Normalized, equal-length sequence set whose targets are the final samples.
inline SequenceSet to_sequence_set(const std::vector<const ResponseCurve*>& curves, const datahub::MinMaxStats& stats) {
    SequenceSet s;
    if (curves.empty()) return s;
    const std::size_t t = curves.front()->size();
    require(t >= 2, ErrorKind::InvalidArgument, "curves need at least two samples");
    s.inputs.resize(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(curves.size()));
    s.targets.resize(static_cast<Eigen::Index>(curves.size()));
    for (std::size_t j = 0; j < curves.size(); ++j) {
        const auto& c = *curves[j];
        require(c.size() == t, ErrorKind::ShapeMismatch,
                "curve '" + c.meta.id + "' has " + std::to_string(c.size()) + " samples, expected " + std::to_string(t));
        for (std::size_t i = 0; i < t; ++i)
            s.inputs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = datahub::normalize_value(c.response[i], stats);
        s.targets(static_cast<Eigen::Index>(j)) = s.inputs(static_cast<Eigen::Index>(t - 1), static_cast<Eigen::Index>(j));
        s.ids.push_back(c.meta.id);
    }
    return s;
}

struct TrainProgress {
    std::size_t member = 0;
    int best_epoch = 0;
    double best_val_loss = 0.0;
    bool diverged = false;
};

/// Trains M members on the full training split with seeds derived from
/// master_seed. Members are independent, so `jobs` > 1 trains them on
/// separate threads without changing any result.
inline EnsembleModel train_ensemble(const SequenceSet& train, const SequenceSet& validation, const NetworkConfig& net,
                                    const TrainConfig& cfg, std::size_t m, std::uint64_t master_seed,
                                    const datahub::MinMaxStats& normalizer, unsigned jobs = 1,
                                    const std::function<void(const TrainProgress&)>& progress = {}) {
    require(m >= 1, ErrorKind::InvalidArgument, "ensemble size must be >= 1");
    std::vector<std::optional<neural::TrainedLearner>> results(m);
    std::vector<std::exception_ptr> errors(m);
    std::atomic<std::size_t> next{0};
    std::mutex report;
    auto worker = [&] {
        for (std::size_t i = next++; i < m; i = next++) {
            TrainProgress p{i, 0, 0.0, false};
            try {
                results[i] = neural::train_base_learner(train, validation, net, cfg, member_seed(master_seed, i));
                neural::quantize_to_float(results[i]->params);
                p.best_epoch = results[i]->log.best_epoch;
                p.best_val_loss = results[i]->log.best_val_loss;
            } catch (const Error& e) {
                if (e.kind() != ErrorKind::TrainingDiverged) {
                    errors[i] = std::current_exception();
                    continue;
                }
                p.diverged = true;
            } catch (...) {
                errors[i] = std::current_exception();
                continue;
            }
            if (progress) {
                std::lock_guard lock(report);
                progress(p);
            }
        }
    };
    const unsigned n_threads = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(m)));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (unsigned k = 0; k < n_threads; ++k) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);

    EnsembleModel model;
    model.config = net;
    model.train_config = cfg;
    model.normalizer = normalizer;
    model.master_seed = master_seed;
    for (std::size_t i = 0; i < m; ++i) {
        if (!results[i]) {
            model.diverged.push_back(i);
            continue;
        }
        model.members.push_back(std::move(results[i]->params));
        model.member_seeds.push_back(member_seed(master_seed, i));
        model.logs.push_back(std::move(results[i]->log));
    }
    if (model.diverged.size() * 2 > m) {
        std::string idx;
        for (auto i : model.diverged) idx += (idx.empty() ? "" : ",") + std::to_string(i);
        fail(ErrorKind::EnsembleDiverged,
             std::to_string(model.diverged.size()) + " of " + std::to_string(m) + " members diverged (" + idx + ")");
    }
    return model;
}

/// Causal streaming forecast on a normalized prefix: entry j uses samples 0..j only.
inline AggregatedForecast predict_stream(const EnsembleModel& model, const Eigen::VectorXd& normalized_prefix) {
    require(model.size() >= 1, ErrorKind::InvalidArgument, "predict_stream: empty ensemble");
    require(normalized_prefix.size() >= 1, ErrorKind::InvalidArgument, "predict_stream: empty prefix");
    std::vector<ProbabilisticForecast> f;
    f.reserve(model.size());
    for (const auto& p : model.members) f.push_back(neural::network_forward(normalized_prefix, p));
    return aggregate(f);
}

/// Raw-response convenience: normalizes with the model's stats first.
inline AggregatedForecast predict_stream(const EnsembleModel& model, const ResponseCurve& prefix) {
    Eigen::VectorXd z(static_cast<Eigen::Index>(prefix.size()));
    for (std::size_t i = 0; i < prefix.size(); ++i) z(static_cast<Eigen::Index>(i)) = datahub::normalize_value(prefix.response[i], model.normalizer);
    return predict_stream(model, z);
}

/// Per-member forecasts for every sequence of a set (outer index: member).
inline std::vector<std::vector<ProbabilisticForecast>> member_forecasts(const EnsembleModel& model, const SequenceSet& set) {
    std::vector<std::vector<ProbabilisticForecast>> out;
    out.reserve(model.size());
    for (const auto& p : model.members) out.push_back(neural::forecast_set(p, set));
    return out;
}

/// Aggregates the first m members of precomputed member forecasts, per sequence.
inline std::vector<AggregatedForecast> aggregate_prefix(const std::vector<std::vector<ProbabilisticForecast>>& per_member,
                                                        std::size_t m) {
    require(m >= 1 && m <= per_member.size(), ErrorKind::InvalidArgument, "aggregate_prefix: bad member count");
    std::vector<AggregatedForecast> out;
    const std::size_t n = per_member.front().size();
    out.reserve(n);
    for (std::size_t j = 0; j < n; ++j) {
        std::vector<ProbabilisticForecast> fs;
        for (std::size_t i = 0; i < m; ++i) fs.push_back(per_member[i][j]);
        out.push_back(aggregate(fs));
    }
    return out;
}

inline std::vector<AggregatedForecast> predict_set(const EnsembleModel& model, const SequenceSet& set) {
    return aggregate_prefix(member_forecasts(model, set), model.size());
}

/// Mixture moments back in response units.
inline AggregatedForecast denormalize(const AggregatedForecast& f, const datahub::MinMaxStats& s) {
    const double r = s.range();
    return {(f.mu_star.array() * r + s.min_response).matrix(), f.var_star * (r * r)};
}

// ensemble.json + member_XX.eqm model files + training_log.json.

inline constexpr int kEnsembleFormatVersion = 1;

inline std::string member_file_name(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "member_%02zu.eqm", i);
    return buf;
}

inline nlohmann::json to_json(const TrainingLog& log) {
    return {{"seed", log.seed},
            {"train_loss", log.train_loss},
            {"val_loss", log.val_loss},
            {"best_epoch", log.best_epoch},
            {"best_val_loss", log.best_val_loss},
            {"training_ids", log.training_ids}};
}

inline TrainingLog training_log_from_json(const nlohmann::json& j) {
    TrainingLog log;
    log.seed = j.at("seed").get<std::uint64_t>();
    log.train_loss = j.at("train_loss").get<std::vector<double>>();
    log.val_loss = j.at("val_loss").get<std::vector<double>>();
    log.best_epoch = j.at("best_epoch").get<int>();
    log.best_val_loss = j.at("best_val_loss").get<double>();
    log.training_ids = j.at("training_ids").get<std::vector<std::string>>();
    return log;
}

inline void save_ensemble(const EnsembleModel& model, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json j;
    j["format_version"] = kEnsembleFormatVersion;
    j["M"] = model.size();
    j["master_seed"] = model.master_seed;
    j["member_seeds"] = model.member_seeds;
    j["diverged_members"] = model.diverged;
    j["network"] = neural::to_json(model.config);
    j["train"] = neural::to_json(model.train_config);
    j["normalizer"] = datahub::to_json(model.normalizer);
    if (!model.policy.is_null()) j["policy"] = model.policy;
    nlohmann::json files = nlohmann::json::array();
    for (std::size_t i = 0; i < model.size(); ++i) {
        neural::write_model(dir / member_file_name(i), model.members[i], model.member_seeds[i]);
        files.push_back(member_file_name(i));
    }
    j["members"] = files;
    std::ofstream os(dir / "ensemble.json");
    require(static_cast<bool>(os), ErrorKind::IoError, "cannot write " + (dir / "ensemble.json").string());
    os << j.dump(1) << '\n';
    if (!model.logs.empty()) {
        nlohmann::json logs = nlohmann::json::array();
        for (const auto& l : model.logs) logs.push_back(to_json(l));
        std::ofstream(dir / "training_log.json") << logs.dump() << '\n';
    }
}

inline EnsembleModel load_ensemble(const std::filesystem::path& dir) {
    const auto path = dir / "ensemble.json";
    std::ifstream is(path);
    require(static_cast<bool>(is), ErrorKind::IoError, "cannot open " + path.string());
    EnsembleModel model;
    try {
        const auto j = nlohmann::json::parse(is);
        require(j.value("format_version", 0) == kEnsembleFormatVersion, ErrorKind::ParseError,
                path.string() + ": unsupported format version");
        model.master_seed = j.at("master_seed").get<std::uint64_t>();
        model.config = neural::network_config_from_json(j.at("network"));
        if (j.contains("train")) model.train_config = neural::train_config_from_json(j["train"]);
        model.normalizer = datahub::min_max_stats_from_json(j.at("normalizer"));
        model.diverged = j.value("diverged_members", std::vector<std::size_t>{});
        if (j.contains("policy")) model.policy = j["policy"];
        const auto files = j.at("members").get<std::vector<std::string>>();
        require(!files.empty() && files.size() == j.at("M").get<std::size_t>(), ErrorKind::ParseError,
                path.string() + ": member list does not match M");
        for (const auto& f : files) {
            auto mf = neural::read_model(dir / f);
            require(mf.params.config() == model.config, ErrorKind::ParseError,
                    (dir / f).string() + ": member config differs from ensemble config");
            model.members.push_back(std::move(mf.params));
            model.member_seeds.push_back(mf.seed);
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::ParseError, path.string() + ": " + e.what());
    }
    if (std::ifstream ls(dir / "training_log.json"); ls) {
        try {
            for (const auto& l : nlohmann::json::parse(ls)) model.logs.push_back(training_log_from_json(l));
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorKind::ParseError, (dir / "training_log.json").string() + ": " + e.what());
        }
    }
    return model;
}

}  // namespace equilcast::ensemble
