#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "curve.hpp"
#include "datahub.hpp"
#include "ensemble.hpp"
#include "error.hpp"
#include "metrics.hpp"

// Plot-ready CSV tables. Rendering is left to external tools.
namespace equilcast::plots {

namespace detail {

inline std::ofstream open_csv(const std::filesystem::path& path, const std::string& header) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path);
    require(static_cast<bool>(os), ErrorKind::IoError, "cannot write " + path.string());
    os << header << '\n';
    return os;
}

inline std::string num(double v) { return equilcast::detail::format_double(v); }
inline std::string num(const std::optional<double>& v) { return v ? num(*v) : std::string(); }

}  // namespace detail

/// Long format: one row per sample of every curve.
inline void write_curves_overlay(const std::vector<const ResponseCurve*>& curves, const std::filesystem::path& path) {
    auto os = detail::open_csv(path, "id,concentration_mg_per_ml,t_seconds,response");
    for (const auto* c : curves)
        for (std::size_t i = 0; i < c->size(); ++i)
            os << c->meta.id << ',' << detail::num(c->meta.concentration_mg_per_ml) << ',' << detail::num(c->times_s[i])
               << ',' << detail::num(c->response[i]) << '\n';
}

struct IsothermRow {
    double concentration = 0.0;
    std::size_t n = 0;
    double mean = 0.0;
    double std = 0.0;  // sample standard deviation, 0 for a single curve
};

/// Final response per concentration stratum.
inline std::vector<IsothermRow> isotherm_rows(const std::vector<const ResponseCurve*>& curves) {
    std::map<double, std::vector<double>> strata;
    for (const auto* c : curves) strata[c->meta.concentration_mg_per_ml].push_back(c->final_value());
    std::vector<IsothermRow> rows;
    for (const auto& [conc, v] : strata) {
        IsothermRow r{conc, v.size(), metrics::mean(v), 0.0};
        if (v.size() > 1) {
            double ss = 0.0;
            for (double x : v) ss += (x - r.mean) * (x - r.mean);
            r.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
        }
        rows.push_back(r);
    }
    return rows;
}

inline void write_isotherm(const std::vector<const ResponseCurve*>& curves, const std::filesystem::path& path) {
    auto os = detail::open_csv(path, "concentration_mg_per_ml,n,mean,std");
    for (const auto& r : isotherm_rows(curves))
        os << detail::num(r.concentration) << ',' << r.n << ',' << detail::num(r.mean) << ',' << detail::num(r.std) << '\n';
}

struct Trace {
    const ResponseCurve* curve = nullptr;
    ensemble::AggregatedForecast forecast;  // normalized
};

/// Denormalized mu* with a two-standard-deviation band.
inline void write_forecast_traces(const std::vector<Trace>& traces, const datahub::MinMaxStats& stats,
                                  const std::filesystem::path& path) {
    auto os = detail::open_csv(path, "id,t_seconds,truth,mu,var,lo,hi");
    for (const auto& tr : traces) {
        const auto& c = *tr.curve;
        require(tr.forecast.size() == static_cast<Eigen::Index>(c.size()), ErrorKind::ShapeMismatch,
                "trace length differs from curve '" + c.meta.id + "'");
        const auto f = ensemble::denormalize(tr.forecast, stats);
        for (std::size_t i = 0; i < c.size(); ++i) {
            const auto k = static_cast<Eigen::Index>(i);
            const double mu = f.mu_star(k), var = f.var_star(k), sd = std::sqrt(var);
            os << c.meta.id << ',' << detail::num(c.times_s[i]) << ',' << detail::num(c.response[i]) << ','
               << detail::num(mu) << ',' << detail::num(var) << ',' << detail::num(mu - 2.0 * sd) << ','
               << detail::num(mu + 2.0 * sd) << '\n';
        }
    }
}

inline void write_t90_hist(const metrics::EvaluationSummary& s, const std::filesystem::path& path) {
    auto os = detail::open_csv(path, "bin_lo,bin_hi,count_exp,count_model,mean_norm_var");
    for (const auto& b : s.histogram)
        os << detail::num(b.lo) << ',' << detail::num(b.hi) << ',' << b.count_exp << ',' << b.count_model << ','
           << detail::num(b.mean_norm_var) << '\n';
}

/// One row per statistic; outliers listed as repeated "outlier" rows.
inline void write_foi_box(const metrics::EvaluationSummary& s, const std::filesystem::path& path) {
    auto os = detail::open_csv(path, "stat,value");
    const auto& b = s.foi_box;
    os << "n," << b.n << '\n';
    if (b.n == 0) return;
    os << "whisker_lo," << detail::num(b.whisker_lo) << "\nq1," << detail::num(b.q1) << "\nmedian,"
       << detail::num(b.median) << "\nq3," << detail::num(b.q3) << "\nwhisker_hi," << detail::num(b.whisker_hi) << '\n';
    if (s.mean_foi) os << "mean," << detail::num(*s.mean_foi) << '\n';
    for (double x : b.outliers) os << "outlier," << detail::num(x) << '\n';
}

inline void write_sweep(const std::vector<metrics::SweepRow>& rows, const std::filesystem::path& path) {
    auto os = detail::open_csv(path, "ensemble_size,mean_foi,median_foi,defined,total");
    for (const auto& r : rows)
        os << r.m << ',' << detail::num(r.mean_foi) << ',' << detail::num(r.median_foi) << ',' << r.defined << ','
           << r.total << '\n';
}

/// Report JSON plus the two figure tables derived from it.
inline void emit_report(const metrics::EvaluationReport& report, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream os(dir / "report.json");
        require(static_cast<bool>(os), ErrorKind::IoError, "cannot write " + (dir / "report.json").string());
        os << metrics::to_json(report).dump(1) << '\n';
    }
    write_t90_hist(report.summary, dir / "t90_hist.csv");
    write_foi_box(report.summary, dir / "foi_box.csv");
}

}  // namespace equilcast::plots
