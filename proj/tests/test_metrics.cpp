#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include <equilcast/metrics.hpp>

using namespace equilcast;
using namespace equilcast::metrics;
using Catch::Approx;

namespace {

// Checks every candidate start against every later sample.
std::optional<double> brute_force_settling(const std::vector<double>& x, const std::vector<double>& t, double eq, double base) {
    const double band = 0.1 * std::abs(eq - base);
    for (std::size_t i = 0; i < x.size(); ++i) {
        bool ok = true;
        for (std::size_t j = i; j < x.size() && ok; ++j) ok = std::abs(x[j] - eq) <= band;
        if (ok) return t[i];
    }
    return std::nullopt;
}

std::vector<double> uniform_times(std::size_t n, double dt) {
    std::vector<double> t(n);
    for (std::size_t i = 0; i < n; ++i) t[i] = dt * static_cast<double>(i);
    return t;
}

ResponseCurve rising_curve(const std::string& id, double amp, double tau_s, std::size_t n, double dt, double noise, std::mt19937_64& rng) {
    std::normal_distribution<double> e(0.0, noise);
    ResponseCurve c;
    c.meta = {id, 1.0, CurveSource::simulated};
    c.times_s = uniform_times(n, dt);
    for (std::size_t i = 0; i < n; ++i)
        c.response.push_back(i == 0 ? 0.0 : amp * (1.0 - std::exp(-c.times_s[i] / tau_s)) + e(rng));
    return c;
}

}  // namespace

TEST_CASE("settling time of an exponential rise", "[metrics][t90]") {
    for (double tau : {100.0, 1234.5, 7000.0}) {
        const double dt = tau / 200.0;
        const auto t = uniform_times(4000, dt);
        std::vector<double> x;
        for (double s : t) x.push_back(1.0 - std::exp(-s / tau));
        const double ts = settling_time(x, t, 1.0, 0.0);
        CHECK(std::abs(ts - tau * std::log(10.0)) <= dt);
    }
}

TEST_CASE("settling time edge cases", "[metrics][t90]") {
    const auto t = uniform_times(6, 10.0);
    CHECK(settling_time({2, 2, 2, 2, 2, 2}, t, 2.0, 0.0) == 0.0);
    // Enters the band at index 2, leaves at 3, re-enters at 4.
    const std::vector<double> x{0.0, 0.5, 0.95, 0.7, 0.97, 1.0};
    CHECK(settling_time(x, t, 1.0, 0.0) == 40.0);
    CHECK(brute_force_settling(x, t, 1.0, 0.0) == 40.0);
    CHECK(settling_time(x, t) == 40.0);
    try {
        (void)settling_time(x, t, 3.0, 0.0);
        FAIL("expected NotSettled");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::NotSettled);
    }
    CHECK_THROWS_AS(settling_time(x, t, 1.0, 1.0), Error);
    CHECK_THROWS_AS(settling_time({}, {}, 1.0, 0.0), Error);
}

TEST_CASE("settling time equals the brute-force suffix scan", "[metrics][t90]") {
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<std::size_t> len(1, 500);
    std::normal_distribution<double> n;
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t m = len(rng);
        const auto t = uniform_times(m, 1.0 + u(rng) * 0.25);
        std::vector<double> x(m);
        double level = u(rng);
        const double target = u(rng) * 3.0, noise = std::abs(u(rng)) * 0.2;
        for (std::size_t i = 0; i < m; ++i) {
            level += 0.05 * (target - level);
            x[i] = level + noise * n(rng);
        }
        double eq = x.back(), base = x.front();
        if (trial % 3 == 0) eq = target;
        if (eq == base) base -= 1.0;
        const auto ref = brute_force_settling(x, t, eq, base);
        if (ref) {
            CHECK(settling_time(x, t, eq, base) == *ref);
        } else {
            CHECK_THROWS_AS(settling_time(x, t, eq, base), Error);
        }
    }
}

TEST_CASE("settling time is invariant under positive affine maps", "[metrics][t90]") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n;
    for (int trial = 0; trial < 200; ++trial) {
        const auto t = uniform_times(100, 3.0);
        std::vector<double> x(100);
        for (std::size_t i = 0; i < 100; ++i) x[i] = 1.0 - std::exp(-0.05 * static_cast<double>(i)) + 0.03 * n(rng);
        const double a = 0.25 * std::exp2(trial % 6), b = 0.125 * (trial % 5);
        std::vector<double> y(100);
        for (std::size_t i = 0; i < 100; ++i) y[i] = a * x[i] + b;
        CHECK(settling_time(x, t, x.back(), x.front()) == settling_time(y, t, a * x.back() + b, a * x.front() + b));
    }
}

TEST_CASE("factor of improvement and normalized variance", "[metrics][foi]") {
    CHECK(factor_of_improvement(3600, 720) == 5.0);
    CHECK(factor_of_improvement(42, 42) == 1.0);
    CHECK_THROWS_AS(factor_of_improvement(3600, 0), Error);

    AggregatedForecast f{Eigen::VectorXd::Zero(4), Eigen::VectorXd::Constant(4, 0.0004)};
    CHECK(normalized_variance(f, 0.02) == Approx(0.02));
    AggregatedForecast g{f.mu_star, 2.0 * f.var_star};
    CHECK(normalized_variance(g, 0.02) == Approx(2.0 * normalized_variance(f, 0.02)));
    try {
        (void)normalized_variance(f, 0.0);
        FAIL("expected Undefined");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Undefined);
    }
}

TEST_CASE("stopping decision", "[metrics][stopping]") {
    const auto t = uniform_times(30, 60.0);
    StoppingPolicy p{0.01, 4, 0.05, 1e9};
    Eigen::VectorXd mu = Eigen::VectorXd::Constant(30, 0.5), var = Eigen::VectorXd::Constant(30, 0.001);
    auto d = stopping_decision(t, mu, var, p);
    CHECK(d.returned);
    CHECK(d.index == 3);
    CHECK(d.t_s == 180.0);
    CHECK(d.value == 0.5);

    var.setConstant(1.0);
    d = stopping_decision(t, mu, var, p);
    CHECK_FALSE(d.returned);
    CHECK(d.t_s == p.max_cutoff_s);

    // Variance is fine from step 10; mu* is jittery through step 10, so the
    // first full calm window ends at step 14.
    for (int i = 0; i < 30; ++i) {
        var(i) = i >= 10 ? 0.001 : 1.0;
        mu(i) = i <= 10 ? 0.5 + 0.2 * (i % 2) : 0.6;
    }
    d = stopping_decision(t, mu, var, p);
    std::optional<std::size_t> brute;
    for (std::size_t i = 0; i < 30 && !brute; ++i) {
        if (i < 3 || var(static_cast<Eigen::Index>(i)) > 0.01) continue;
        double lo = 1e9, hi = -1e9;
        for (std::size_t j = i - 3; j <= i; ++j) {
            lo = std::min(lo, mu(static_cast<Eigen::Index>(j)));
            hi = std::max(hi, mu(static_cast<Eigen::Index>(j)));
        }
        if (hi - lo <= 0.05) brute = i;
    }
    REQUIRE(brute);
    CHECK(*brute == 14);
    CHECK(d.index == 14);

    p.max_cutoff_s = 13 * 60.0;
    d = stopping_decision(t, mu, var, p);
    CHECK_FALSE(d.returned);
    CHECK(d.t_s == 13 * 60.0);
}

TEST_CASE("stopping decision bounds on random streams", "[metrics][stopping]") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 300; ++trial) {
        const auto t = uniform_times(50, 10.0);
        Eigen::VectorXd mu(50), var(50);
        for (int i = 0; i < 50; ++i) {
            mu(i) = u(rng);
            var(i) = u(rng);
        }
        StoppingPolicy p{0.2 + 0.8 * u(rng), 1 + trial % 7, 0.3 + u(rng), 100.0 + 400.0 * u(rng)};
        const auto d = stopping_decision(t, mu, var, p);
        CHECK(d.t_s <= p.max_cutoff_s);
        if (d.returned) CHECK(d.index + 1 >= static_cast<std::size_t>(p.stability_window));
    }
}

TEST_CASE("echo forecaster yields unit FOI on every curve", "[metrics][evaluate]") {
    std::mt19937_64 rng(3);
    std::vector<ResponseCurve> curves;
    for (int i = 0; i < 40; ++i)
        curves.push_back(rising_curve("e" + std::to_string(i), 0.01 + 0.001 * i, 1800.0 + 100.0 * i, 250, 188.0, 0.0005, rng));
    std::vector<const ResponseCurve*> ptrs;
    for (const auto& c : curves) ptrs.push_back(&c);
    const datahub::MinMaxStats stats{-0.002, 0.06, "t"};
    const Forecaster echo = [&](const ResponseCurve& c) { return echo_forecast(c, stats); };
    const auto rep = evaluate_dataset(echo, ptrs, stats, StoppingPolicy{});
    REQUIRE(rep.records.size() == curves.size());
    CHECK(rep.summary.defined + rep.summary.undefined == rep.summary.total);
    CHECK(rep.summary.defined == curves.size());
    for (const auto& r : rep.records) {
        REQUIRE(r.factor_of_improvement);
        CHECK(*r.factor_of_improvement == 1.0);
        CHECK(*r.t90_model_s == *r.t90_experimental_s);
    }
    CHECK(std::is_sorted(rep.records.begin(), rep.records.end(), [](auto& a, auto& b) { return a.id < b.id; }));
}

TEST_CASE("oracle forecaster settles at the first sample", "[metrics][evaluate]") {
    std::mt19937_64 rng(4);
    std::vector<ResponseCurve> curves;
    for (int i = 0; i < 10; ++i) curves.push_back(rising_curve("o" + std::to_string(i), 0.02, 3000.0, 100, 300.0, 0.0, rng));
    std::vector<const ResponseCurve*> ptrs;
    std::vector<AggregatedForecast> fs;
    const datahub::MinMaxStats stats{0.0, 0.04, "t"};
    for (const auto& c : curves) {
        ptrs.push_back(&c);
        fs.push_back({Eigen::VectorXd::Constant(100, datahub::normalize_value(c.final_value(), stats)), Eigen::VectorXd::Zero(100)});
    }
    const auto rep = evaluate_forecasts(ptrs, fs, stats, StoppingPolicy{});
    const double max_foi = (*rep.records.front().t90_experimental_s) / 300.0;
    for (const auto& r : rep.records) {
        CHECK(*r.t90_model_s == 300.0);
        CHECK(*r.factor_of_improvement == Approx(max_foi));
    }
}

TEST_CASE("summary statistics", "[metrics][summary]") {
    CHECK(quantile({1, 2, 3, 4}, 0.5) == 2.5);
    CHECK(quantile({5, 1, 3}, 0.25) == 2.0);
    const auto b = box_stats({1, 2, 3, 4, 5, 6, 7, 8, 100});
    CHECK(b.median == 5.0);
    CHECK(b.q1 == 3.0);
    CHECK(b.q3 == 7.0);
    CHECK(b.whisker_hi == 8.0);
    CHECK(b.outliers == std::vector<double>{100});
    CHECK(spearman({1, 2, 3, 4}, {10, 20, 30, 1000}) == Approx(1.0));
    CHECK(spearman({1, 2, 3, 4}, {4, 3, 2, 1}) == Approx(-1.0));
    CHECK(ranks({3, 1, 3, 2}) == std::vector<double>{3.5, 1, 3.5, 2});

    std::vector<EvaluationRecord> recs(3);
    recs[0].t90_experimental_s = 100;
    recs[0].t90_model_s = 10;
    recs[0].normalized_variance = 0.2;
    recs[1].t90_experimental_s = 50;
    recs[1].t90_model_s = 10;
    recs[1].normalized_variance = 0.4;
    recs[2].t90_experimental_s = 80;
    const auto h = t90_histogram(recs, 10);
    REQUIRE(h.size() == 10);
    CHECK(h.front().lo == 0.0);
    CHECK(h.back().hi == 100.0);
    std::size_t ce = 0, cm = 0;
    for (const auto& bin : h) {
        ce += bin.count_exp;
        cm += bin.count_model;
    }
    CHECK(ce == 3);
    CHECK(cm == 2);
    CHECK(h[1].count_model == 2);
    CHECK(*h[1].mean_norm_var == Approx(0.3));
}

TEST_CASE("default policy from validation forecasts", "[metrics][stopping]") {
    std::vector<AggregatedForecast> fs;
    for (int i = 0; i < 4; ++i)
        fs.push_back({Eigen::VectorXd::Constant(100, 0.5), Eigen::VectorXd::Constant(100, 0.01 * (i + 1))});
    const auto p = derive_default_policy(fs, 3600.0);
    CHECK(p.stability_window == 4);
    CHECK(p.max_cutoff_s == 3600.0);
    CHECK(p.variance_threshold == Approx(quantile({0.01, 0.02, 0.03, 0.04}, 0.25)));
    CHECK(p.stability_band > 0.0);
    const auto j = to_json(p);
    CHECK(stopping_policy_from_json(j) == p);
}

TEST_CASE("sweep over nested prefixes", "[metrics][sweep]") {
    std::mt19937_64 rng(6);
    std::vector<ResponseCurve> curves;
    std::vector<Eigen::VectorXd> seqs;
    for (int i = 0; i < 24; ++i) {
        curves.push_back(rising_curve("s" + std::to_string(i), 0.01 + 0.0015 * i, 300.0 + 30.0 * i, 20, 60.0, 0.0002, rng));
    }
    std::vector<const ResponseCurve*> train, val;
    for (int i = 0; i < 24; ++i) (i < 18 ? train : val).push_back(&curves[static_cast<std::size_t>(i)]);
    datahub::Corpus corpus;
    corpus.curves = curves;
    for (int i = 0; i < 18; ++i) corpus.splits[curves[static_cast<std::size_t>(i)].meta.id] = datahub::Split::train;
    const auto stats = datahub::fit_normalizer(corpus);
    neural::NetworkConfig net;
    net.lstm_layer_sizes = {4, 6};
    net.sequence_length = 20;
    neural::TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 6;
    const auto ts = ensemble::to_sequence_set(train, stats), vs = ensemble::to_sequence_set(val, stats);
    const auto pool = ensemble::train_ensemble(ts, vs, net, cfg, 4, 21, stats);
    const StoppingPolicy policy{};
    const auto rows = sweep_pool(pool, val, {1, 2, 4}, policy);
    REQUIRE(rows.size() == 3);
    const auto single = evaluate_dataset(pool.prefix(1), val, policy);
    CHECK(rows[0].mean_foi == single.summary.mean_foi);
    CHECK(rows[0].median_foi == single.summary.median_foi);
    CHECK(rows[2].total == val.size());
    const auto direct = ensemble_size_sweep(ts, vs, val, {1, 2, 4}, net, cfg, 21, stats, policy);
    CHECK(direct[1].mean_foi == rows[1].mean_foi);
    CHECK_THROWS_AS(sweep_pool(pool, val, {5}, policy), Error);
    CHECK_THROWS_AS(evaluate_dataset(pool, train, policy), Error);
}
