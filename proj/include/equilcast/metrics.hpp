#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "curve.hpp"
#include "datahub.hpp"
#include "ensemble.hpp"
#include "error.hpp"

namespace equilcast::metrics {

using ensemble::AggregatedForecast;

inline constexpr double kSettlingBand = 0.10;

/// Last-exit settling time: the earliest sample time after which every sample
/// stays within 10% of |equilibrium - baseline| of the equilibrium.
inline double settling_time(const std::vector<double>& series, const std::vector<double>& times_s, double equilibrium,
                            double baseline) {
    require(!series.empty() && series.size() == times_s.size(), ErrorKind::ShapeMismatch,
            "settling_time: series and times must be nonempty and equally long");
    const double span = std::abs(equilibrium - baseline);
    require(span > 0.0, ErrorKind::Undefined, "settling_time: equilibrium equals baseline");
    const double band = kSettlingBand * span;
    std::size_t k = series.size();
    while (k > 0 && std::abs(series[k - 1] - equilibrium) <= band) --k;
    require(k < series.size(), ErrorKind::NotSettled, "series never settles within the band");
    return times_s[k];
}

/// Equilibrium defaults to the final sample, baseline to the first.
inline double settling_time(const std::vector<double>& series, const std::vector<double>& times_s) {
    require(!series.empty(), ErrorKind::ShapeMismatch, "settling_time: empty series");
    return settling_time(series, times_s, series.back(), series.front());
}

inline double factor_of_improvement(double t90_exp, double t90_model) {
    require(t90_exp > 0.0 && t90_model > 0.0, ErrorKind::Undefined, "factor of improvement needs positive times");
    return t90_exp / t90_model;
}

/// Time-averaged predicted variance over the equilibrium response magnitude.
inline double normalized_variance(const AggregatedForecast& f, double equilibrium_response) {
    require(equilibrium_response != 0.0, ErrorKind::Undefined, "normalized variance: zero equilibrium");
    require(f.size() >= 1, ErrorKind::InvalidArgument, "normalized variance: empty forecast");
    return f.var_star.mean() / std::abs(equilibrium_response);
}

struct StoppingPolicy {
    double variance_threshold = 1e-3;  // normalized-response variance
    int stability_window = 10;         // samples
    double stability_band = 0.02;      // max - min of mu* over the window
    double max_cutoff_s = 13.0 * 3600.0;

    bool operator==(const StoppingPolicy&) const = default;
};

inline void validate(const StoppingPolicy& p) {
    require(p.variance_threshold > 0.0 && p.stability_window > 0 && p.stability_band > 0.0 && p.max_cutoff_s > 0.0,
            ErrorKind::InvalidArgument, "stopping policy values must be positive");
}

inline nlohmann::json to_json(const StoppingPolicy& p) {
    return {{"variance_threshold", p.variance_threshold},
            {"stability_window", p.stability_window},
            {"stability_band", p.stability_band},
            {"max_cutoff_s", p.max_cutoff_s}};
}

inline StoppingPolicy stopping_policy_from_json(const nlohmann::json& j) {
    StoppingPolicy p;
    try {
        p.variance_threshold = j.at("variance_threshold").get<double>();
        p.stability_window = j.at("stability_window").get<int>();
        p.stability_band = j.at("stability_band").get<double>();
        p.max_cutoff_s = j.at("max_cutoff_s").get<double>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::ParseError, std::string("stopping policy: ") + e.what());
    }
    validate(p);
    return p;
}

struct StopDecision {
    bool returned = false;
    double value = std::numeric_limits<double>::quiet_NaN();  // mu* at the decision
    double t_s = 0.0;                                         // decision time, or the cutoff when invalid
    std::size_t index = 0;

    bool operator==(const StopDecision&) const = default;
};

/// Returns at the first step whose variance is under threshold and whose
/// trailing window of mu* spans no more than the band; invalid otherwise.
inline StopDecision stopping_decision(const std::vector<double>& times_s, const Eigen::VectorXd& mu_star,
                                      const Eigen::VectorXd& var_star, const StoppingPolicy& policy) {
    validate(policy);
    require(times_s.size() == static_cast<std::size_t>(mu_star.size()) && mu_star.size() == var_star.size(),
            ErrorKind::ShapeMismatch, "stopping_decision: stream lengths differ");
    for (std::size_t i = 1; i < times_s.size(); ++i)
        require(times_s[i] >= times_s[i - 1], ErrorKind::InvalidArgument, "stopping_decision: timestamps not monotone");
    const auto w = static_cast<std::size_t>(policy.stability_window);
    for (std::size_t t = 0; t < times_s.size() && times_s[t] <= policy.max_cutoff_s; ++t) {
        if (t + 1 < w || !(var_star(static_cast<Eigen::Index>(t)) <= policy.variance_threshold)) continue;
        const auto window = mu_star.segment(static_cast<Eigen::Index>(t + 1 - w), static_cast<Eigen::Index>(w));
        if (window.maxCoeff() - window.minCoeff() <= policy.stability_band)
            return {true, mu_star(static_cast<Eigen::Index>(t)), times_s[t], t};
    }
    StopDecision out;
    out.t_s = policy.max_cutoff_s;
    out.index = times_s.size();
    return out;
}

/// Elapsed time until each sample has been recorded, the first sample counting
/// as one sampling interval. Response times in evaluations use this axis.
inline std::vector<double> acquisition_times(const std::vector<double>& times_s) {
    require(times_s.size() >= 2, ErrorKind::InvalidArgument, "acquisition_times: need at least two samples");
    const double dt0 = times_s[1] - times_s[0];
    std::vector<double> out(times_s.size());
    for (std::size_t i = 0; i < times_s.size(); ++i) out[i] = times_s[i] - times_s[0] + dt0;
    return out;
}

struct EvaluationRecord {
    std::string id;
    double concentration_mg_per_ml = 0.0;
    std::optional<double> t90_experimental_s;
    std::optional<double> t90_model_s;
    std::optional<double> factor_of_improvement;
    std::optional<double> normalized_variance;
    StopDecision stopping;
    std::string note;  // why a quantity is undefined

    bool foi_defined() const { return factor_of_improvement.has_value(); }
};

/// Evaluates normalized forecasts against raw curves. Settling uses the raw
/// first sample as baseline and the raw final sample as equilibrium for both
/// the measured curve and the denormalized mu* trajectory.
inline EvaluationRecord evaluate_curve(const ResponseCurve& curve, const AggregatedForecast& normalized_forecast,
                                       const datahub::MinMaxStats& stats, const StoppingPolicy& policy) {
    require(normalized_forecast.size() == static_cast<Eigen::Index>(curve.size()), ErrorKind::ShapeMismatch,
            "forecast length differs from curve '" + curve.meta.id + "'");
    EvaluationRecord r;
    r.id = curve.meta.id;
    r.concentration_mg_per_ml = curve.meta.concentration_mg_per_ml;
    const auto f = ensemble::denormalize(normalized_forecast, stats);
    const auto tau = acquisition_times(curve.times_s);
    const double eq = curve.final_value(), base = curve.response.front();
    std::vector<double> mu(f.mu_star.data(), f.mu_star.data() + f.mu_star.size());
    auto note = [&](const std::string& s) { r.note += (r.note.empty() ? "" : "; ") + s; };
    try {
        r.t90_experimental_s = settling_time(curve.response, tau, eq, base);
    } catch (const Error& e) {
        note(std::string("experimental: ") + e.what());
    }
    try {
        r.t90_model_s = settling_time(mu, tau, eq, base);
    } catch (const Error& e) {
        note(std::string("model: ") + e.what());
    }
    if (r.t90_experimental_s && r.t90_model_s)
        r.factor_of_improvement = factor_of_improvement(*r.t90_experimental_s, *r.t90_model_s);
    if (eq != 0.0) r.normalized_variance = normalized_variance(f, eq);
    r.stopping = stopping_decision(curve.times_s, normalized_forecast.mu_star, normalized_forecast.var_star, policy);
    return r;
}

struct BoxStats {
    double q1 = 0, median = 0, q3 = 0;
    double whisker_lo = 0, whisker_hi = 0;
    std::vector<double> outliers;
    std::size_t n = 0;
};

/// Linear-interpolation quantile (R type 7) of an unsorted sample.
inline double quantile(std::vector<double> v, double q) {
    require(!v.empty(), ErrorKind::InvalidArgument, "quantile of an empty sample");
    std::sort(v.begin(), v.end());
    const double h = (static_cast<double>(v.size()) - 1.0) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline double median(std::vector<double> v) { return quantile(std::move(v), 0.5); }

inline double mean(const std::vector<double>& v) {
    require(!v.empty(), ErrorKind::InvalidArgument, "mean of an empty sample");
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// Quartiles, Tukey whiskers (most extreme data within 1.5 IQR) and outliers.
inline BoxStats box_stats(const std::vector<double>& v) {
    BoxStats b;
    b.n = v.size();
    if (v.empty()) return b;
    b.q1 = quantile(v, 0.25);
    b.median = quantile(v, 0.5);
    b.q3 = quantile(v, 0.75);
    const double iqr = b.q3 - b.q1, lo = b.q1 - 1.5 * iqr, hi = b.q3 + 1.5 * iqr;
    b.whisker_lo = std::numeric_limits<double>::infinity();
    b.whisker_hi = -b.whisker_lo;
    for (double x : v) {
        if (x < lo || x > hi) {
            b.outliers.push_back(x);
        } else {
            b.whisker_lo = std::min(b.whisker_lo, x);
            b.whisker_hi = std::max(b.whisker_hi, x);
        }
    }
    std::sort(b.outliers.begin(), b.outliers.end());
    return b;
}

/// Average ranks (1-based), ties sharing the mean rank.
inline std::vector<double> ranks(const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
        i = j + 1;
    }
    return r;
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    require(x.size() == y.size() && x.size() >= 2, ErrorKind::InvalidArgument, "correlation needs paired samples");
    const double mx = mean(x), my = mean(y);
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    require(sxx > 0 && syy > 0, ErrorKind::Undefined, "correlation of a constant sample");
    return sxy / std::sqrt(sxx * syy);
}

inline double spearman(const std::vector<double>& x, const std::vector<double>& y) { return pearson(ranks(x), ranks(y)); }

struct HistogramBin {
    double lo = 0, hi = 0;
    std::size_t count_exp = 0, count_model = 0;
    std::optional<double> mean_norm_var;  // over records whose model t90 falls in the bin
};

struct EvaluationSummary {
    std::size_t total = 0;
    std::size_t defined = 0;
    std::size_t undefined = 0;
    std::size_t stop_returned = 0;
    std::size_t stop_invalid = 0;
    std::optional<double> mean_foi;
    std::optional<double> median_foi;
    std::optional<double> mean_t90_experimental_s;
    std::optional<double> mean_t90_model_s;
    std::vector<HistogramBin> histogram;
    BoxStats foi_box;
    std::optional<double> spearman_normvar_t90_model;
};

struct EvaluationReport {
    std::vector<EvaluationRecord> records;  // sorted by id
    EvaluationSummary summary;
};

/// Shared-edge histogram of both t90 distributions over [0, max].
inline std::vector<HistogramBin> t90_histogram(const std::vector<EvaluationRecord>& records, std::size_t bins) {
    double hi = 0.0;
    for (const auto& r : records) {
        if (r.t90_experimental_s) hi = std::max(hi, *r.t90_experimental_s);
        if (r.t90_model_s) hi = std::max(hi, *r.t90_model_s);
    }
    std::vector<HistogramBin> out;
    if (bins == 0 || hi <= 0.0) return out;
    const double w = hi / static_cast<double>(bins);
    for (std::size_t b = 0; b < bins; ++b) out.push_back({w * static_cast<double>(b), w * static_cast<double>(b + 1)});
    auto bin_of = [&](double t) { return std::min(bins - 1, static_cast<std::size_t>(t / w)); };
    std::vector<std::vector<double>> nv(bins);
    for (const auto& r : records) {
        if (r.t90_experimental_s) ++out[bin_of(*r.t90_experimental_s)].count_exp;
        if (r.t90_model_s) {
            const auto b = bin_of(*r.t90_model_s);
            ++out[b].count_model;
            if (r.normalized_variance) nv[b].push_back(*r.normalized_variance);
        }
    }
    for (std::size_t b = 0; b < bins; ++b)
        if (!nv[b].empty()) out[b].mean_norm_var = mean(nv[b]);
    return out;
}

inline EvaluationSummary summarize(const std::vector<EvaluationRecord>& records, std::size_t bins = 20) {
    EvaluationSummary s;
    s.total = records.size();
    std::vector<double> foi, te, tm, nv_paired, tm_paired;
    for (const auto& r : records) {
        if (r.factor_of_improvement) {
            ++s.defined;
            foi.push_back(*r.factor_of_improvement);
        } else {
            ++s.undefined;
        }
        (r.stopping.returned ? s.stop_returned : s.stop_invalid)++;
        if (r.t90_experimental_s) te.push_back(*r.t90_experimental_s);
        if (r.t90_model_s) tm.push_back(*r.t90_model_s);
        if (r.t90_model_s && r.normalized_variance) {
            tm_paired.push_back(*r.t90_model_s);
            nv_paired.push_back(*r.normalized_variance);
        }
    }
    if (!foi.empty()) {
        s.mean_foi = mean(foi);
        s.median_foi = median(foi);
    }
    if (!te.empty()) s.mean_t90_experimental_s = mean(te);
    if (!tm.empty()) s.mean_t90_model_s = mean(tm);
    s.histogram = t90_histogram(records, bins);
    s.foi_box = box_stats(foi);
    if (nv_paired.size() >= 3) {
        try {
            s.spearman_normvar_t90_model = spearman(nv_paired, tm_paired);
        } catch (const Error&) {
        }
    }
    return s;
}

/// Evaluates one forecast per curve (same order); records come back sorted by id.
inline EvaluationReport evaluate_forecasts(const std::vector<const ResponseCurve*>& curves,
                                           const std::vector<AggregatedForecast>& normalized_forecasts,
                                           const datahub::MinMaxStats& stats, const StoppingPolicy& policy,
                                           std::size_t bins = 20) {
    require(curves.size() == normalized_forecasts.size(), ErrorKind::ShapeMismatch,
            "evaluate: one forecast per curve required");
    EvaluationReport rep;
    for (std::size_t i = 0; i < curves.size(); ++i)
        rep.records.push_back(evaluate_curve(*curves[i], normalized_forecasts[i], stats, policy));
    std::sort(rep.records.begin(), rep.records.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    rep.summary = summarize(rep.records, bins);
    return rep;
}

/// Runs the ensemble over every curve. Curves that the members were trained on
/// are rejected when training logs are available.
inline EvaluationReport evaluate_dataset(const ensemble::EnsembleModel& model, const std::vector<const ResponseCurve*>& curves,
                                         const StoppingPolicy& policy, std::size_t bins = 20) {
    require(!curves.empty(), ErrorKind::EmptyCorpus, "evaluate_dataset: no curves");
    if (!model.logs.empty()) {
        const auto& ids = model.logs.front().training_ids;
        for (const auto* c : curves)
            require(!std::binary_search(ids.begin(), ids.end(), c->meta.id), ErrorKind::InvalidArgument,
                    "curve '" + c->meta.id + "' belongs to the training split");
    }
    std::vector<AggregatedForecast> forecasts;
    const bool equal_length = std::all_of(curves.begin(), curves.end(), [&](auto* c) { return c->size() == curves.front()->size(); });
    if (equal_length) {
        forecasts = ensemble::predict_set(model, ensemble::to_sequence_set(curves, model.normalizer));
    } else {
        for (const auto* c : curves) forecasts.push_back(ensemble::predict_stream(model, *c));
    }
    return evaluate_forecasts(curves, forecasts, model.normalizer, policy, bins);
}

/// Any causal forecaster mapping a raw curve to a normalized (mu*, var*) stream.
using Forecaster = std::function<AggregatedForecast(const ResponseCurve&)>;

inline EvaluationReport evaluate_dataset(const Forecaster& forecaster, const std::vector<const ResponseCurve*>& curves,
                                         const datahub::MinMaxStats& stats, const StoppingPolicy& policy,
                                         std::size_t bins = 20) {
    require(!curves.empty(), ErrorKind::EmptyCorpus, "evaluate_dataset: no curves");
    std::vector<AggregatedForecast> forecasts;
    for (const auto* c : curves) forecasts.push_back(forecaster(*c));
    return evaluate_forecasts(curves, forecasts, stats, policy, bins);
}

/// mu*[t] = response[t], zero variance: the forecaster that adds nothing.
inline AggregatedForecast echo_forecast(const ResponseCurve& curve, const datahub::MinMaxStats& stats) {
    AggregatedForecast f{Eigen::VectorXd(static_cast<Eigen::Index>(curve.size())),
                         Eigen::VectorXd::Zero(static_cast<Eigen::Index>(curve.size()))};
    for (std::size_t i = 0; i < curve.size(); ++i)
        f.mu_star(static_cast<Eigen::Index>(i)) = datahub::normalize_value(curve.response[i], stats);
    return f;
}

/// Default policy from the validation split: 25th percentile of final-quarter
/// variances and of final-quarter trailing-window mu* ranges; cutoff at the
/// full experiment duration.
inline StoppingPolicy derive_default_policy(const std::vector<AggregatedForecast>& validation_forecasts,
                                            double duration_s, int window = 0) {
    require(!validation_forecasts.empty(), ErrorKind::InvalidArgument, "derive_default_policy: no forecasts");
    const Eigen::Index t = validation_forecasts.front().size();
    StoppingPolicy p;
    p.stability_window = window > 0 ? window : std::max(2, static_cast<int>(t / 25));
    p.max_cutoff_s = duration_s;
    std::vector<double> vars, ranges;
    const Eigen::Index start = t - t / 4;
    for (const auto& f : validation_forecasts) {
        for (Eigen::Index k = std::max<Eigen::Index>(start, 0); k < f.size(); ++k) {
            vars.push_back(f.var_star(k));
            if (k + 1 >= p.stability_window) {
                const auto seg = f.mu_star.segment(k + 1 - p.stability_window, p.stability_window);
                ranges.push_back(seg.maxCoeff() - seg.minCoeff());
            }
        }
    }
    p.variance_threshold = std::max(quantile(vars, 0.25), 1e-12);
    p.stability_band = ranges.empty() ? 1e-3 : std::max(quantile(ranges, 0.25), 1e-12);
    return p;
}

struct SweepRow {
    std::size_t m = 0;
    std::optional<double> mean_foi;
    std::optional<double> median_foi;
    std::size_t defined = 0;
    std::size_t total = 0;
};

/// Evaluates nested member prefixes of one trained pool.
inline std::vector<SweepRow> sweep_pool(const ensemble::EnsembleModel& pool, const std::vector<const ResponseCurve*>& curves,
                                        const std::vector<std::size_t>& sizes, const StoppingPolicy& policy) {
    require(!sizes.empty(), ErrorKind::InvalidArgument, "sweep: no ensemble sizes");
    for (auto m : sizes)
        require(m >= 1 && m <= pool.size(), ErrorKind::InvalidArgument,
                "sweep: size " + std::to_string(m) + " exceeds the trained pool of " + std::to_string(pool.size()));
    const auto set = ensemble::to_sequence_set(curves, pool.normalizer);
    const auto per_member = ensemble::member_forecasts(pool, set);
    std::vector<SweepRow> rows;
    for (auto m : sizes) {
        const auto rep = evaluate_forecasts(curves, ensemble::aggregate_prefix(per_member, m), pool.normalizer, policy);
        rows.push_back({m, rep.summary.mean_foi, rep.summary.median_foi, rep.summary.defined, rep.summary.total});
    }
    return rows;
}

/// Trains the largest requested ensemble once, then evaluates prefixes on the
/// validation curves.
inline std::vector<SweepRow> ensemble_size_sweep(const neural::SequenceSet& train, const neural::SequenceSet& validation,
                                                 const std::vector<const ResponseCurve*>& validation_curves,
                                                 const std::vector<std::size_t>& sizes, const neural::NetworkConfig& net,
                                                 const neural::TrainConfig& cfg, std::uint64_t master_seed,
                                                 const datahub::MinMaxStats& stats, const StoppingPolicy& policy,
                                                 unsigned jobs = 1) {
    require(!sizes.empty(), ErrorKind::InvalidArgument, "sweep: no ensemble sizes");
    const auto m = *std::max_element(sizes.begin(), sizes.end());
    const auto pool = ensemble::train_ensemble(train, validation, net, cfg, m, master_seed, stats, jobs);
    require(pool.diverged.empty(), ErrorKind::EnsembleDiverged, "sweep: members diverged, nested prefixes undefined");
    return sweep_pool(pool, validation_curves, sizes, policy);
}

// JSON report.

inline nlohmann::json to_json(const StopDecision& d) {
    if (!d.returned) return {{"status", "invalid"}, {"t_s", d.t_s}};
    return {{"status", "returned"}, {"t_s", d.t_s}, {"value", d.value}, {"index", d.index}};
}

inline nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

inline nlohmann::json to_json(const EvaluationRecord& r) {
    nlohmann::json j{{"id", r.id},
                     {"concentration_mg_per_ml", r.concentration_mg_per_ml},
                     {"t90_experimental_s", opt(r.t90_experimental_s)},
                     {"t90_model_s", opt(r.t90_model_s)},
                     {"factor_of_improvement", opt(r.factor_of_improvement)},
                     {"normalized_variance", opt(r.normalized_variance)},
                     {"stopping", to_json(r.stopping)}};
    if (!r.note.empty()) j["note"] = r.note;
    return j;
}

inline nlohmann::json to_json(const EvaluationSummary& s) {
    nlohmann::json hist = nlohmann::json::array();
    for (const auto& b : s.histogram)
        hist.push_back({{"bin_lo", b.lo}, {"bin_hi", b.hi}, {"count_exp", b.count_exp}, {"count_model", b.count_model},
                        {"mean_norm_var", opt(b.mean_norm_var)}});
    return {{"total", s.total},
            {"defined_foi", s.defined},
            {"undefined_foi", s.undefined},
            {"stop_returned", s.stop_returned},
            {"stop_invalid", s.stop_invalid},
            {"mean_foi", opt(s.mean_foi)},
            {"median_foi", opt(s.median_foi)},
            {"mean_t90_experimental_s", opt(s.mean_t90_experimental_s)},
            {"mean_t90_model_s", opt(s.mean_t90_model_s)},
            {"spearman_normvar_t90_model", opt(s.spearman_normvar_t90_model)},
            {"foi_box",
             {{"n", s.foi_box.n},
              {"q1", s.foi_box.q1},
              {"median", s.foi_box.median},
              {"q3", s.foi_box.q3},
              {"whisker_lo", s.foi_box.whisker_lo},
              {"whisker_hi", s.foi_box.whisker_hi},
              {"outliers", s.foi_box.outliers}}},
            {"t90_histogram", hist}};
}

inline nlohmann::json to_json(const EvaluationReport& rep) {
    nlohmann::json recs = nlohmann::json::array();
    for (const auto& r : rep.records) recs.push_back(to_json(r));
    return {{"records", recs}, {"summary", to_json(rep.summary)}};
}

}  // namespace equilcast::metrics
