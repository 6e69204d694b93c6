#include <equilcast/spectra.hpp>

#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <random>

using namespace equilcast;
using namespace equilcast::spectra;
using Catch::Approx;

namespace {

Spectrum fringes(double eot_nm, std::size_t samples = 1000, double lo = 500.0, double hi = 1000.0,
                 double offset = 0.5, double amplitude = 0.3) {
    Spectrum s;
    s.kind = SpectrumKind::reflectance_fraction;
    for (std::size_t i = 0; i < samples; ++i) {
        const double w = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(samples - 1);
        s.wavelengths_nm.push_back(w);
        s.values.push_back(offset + amplitude * std::cos(2.0 * std::numbers::pi * eot_nm / w));
    }
    return s;
}

Spectrum flat(double value, std::size_t samples = 200) {
    Spectrum s;
    for (std::size_t i = 0; i < samples; ++i) {
        s.wavelengths_nm.push_back(450.0 + static_cast<double>(i) * 3.0);
        s.values.push_back(value);
    }
    return s;
}

double fft_bin_width(std::size_t samples_in_window, int pad, double lo, double hi) {
    const double dk = (1.0 / lo - 1.0 / hi) / static_cast<double>(samples_in_window - 1);
    return 1.0 / (static_cast<double>(samples_in_window * static_cast<std::size_t>(pad)) * dk);
}

}  // namespace

TEST_CASE("calibrate_reflectance reference points", "[spectra]") {
    const auto dark = flat(100.0);
    const auto reference = flat(4100.0);
    auto raw = reference;
    CHECK(calibrate_reflectance(raw, dark, reference).values == std::vector<double>(200, 1.0));
    raw = dark;
    CHECK(calibrate_reflectance(raw, dark, reference).values == std::vector<double>(200, 0.0));
    raw = flat(2100.0);
    for (double v : calibrate_reflectance(raw, dark, reference).values) CHECK(v == Approx(0.5));
}

TEST_CASE("calibrate_reflectance is invariant to a common gain", "[spectra]") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Spectrum dark = flat(0.0), reference = flat(0.0), raw = flat(0.0);
    for (std::size_t i = 0; i < raw.values.size(); ++i) {
        dark.values[i] = 50.0 + 10.0 * u(rng);
        reference.values[i] = 1000.0 + 500.0 * u(rng);
        raw.values[i] = dark.values[i] + (reference.values[i] - dark.values[i]) * u(rng);
    }
    const auto base = calibrate_reflectance(raw, dark, reference);
    for (double gain : {0.01, 3.0, 1e4}) {
        auto scale = [gain](Spectrum s) {
            for (double& v : s.values) v *= gain;
            return s;
        };
        const auto scaled = calibrate_reflectance(scale(raw), scale(dark), scale(reference));
        for (std::size_t i = 0; i < base.values.size(); ++i)
            CHECK(scaled.values[i] == Approx(base.values[i]).epsilon(1e-12));
    }
}

TEST_CASE("calibrate_reflectance errors and clipping", "[spectra]") {
    const auto dark = flat(100.0);
    auto reference = flat(1000.0);
    auto shifted = flat(1000.0);
    shifted.wavelengths_nm[3] += 0.5;
    CHECK_THROWS_AS(calibrate_reflectance(shifted, dark, reference), Error);
    reference.values[7] = 100.0;
    try {
        calibrate_reflectance(flat(500.0), dark, reference);
        FAIL("expected CalibrationDegenerate");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::CalibrationDegenerate);
    }
    const auto hot = calibrate_reflectance(flat(5000.0), dark, flat(1000.0));
    CHECK(hot.values.front() == kReflectanceClipMax);
}

TEST_CASE("compute_eot recovers a synthetic fringe frequency", "[spectra][rifts]") {
    const double eot = compute_eot(fringes(10000.0), {500.0, 1000.0}, 8);
    CHECK(std::abs(eot - 10000.0) <= fft_bin_width(1000, 8, 500.0, 1000.0));
    CHECK(eot == Approx(10000.0).epsilon(0.005));

    const double doubled = compute_eot(fringes(20000.0), {500.0, 1000.0}, 8);
    CHECK(doubled / eot == Approx(2.0).epsilon(0.005));
}

TEST_CASE("compute_eot accuracy over randomized thickness", "[spectra][rifts][property]") {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> eot_dist(5000.0, 30000.0);
    for (int trial = 0; trial < 200; ++trial) {
        const double truth = eot_dist(rng);
        const double got = compute_eot(fringes(truth), {500.0, 1000.0}, 8);
        INFO("2nL = " << truth);
        CHECK(std::abs(got - truth) / truth <= 0.005);
    }
}

TEST_CASE("compute_eot ignores a constant offset", "[spectra][rifts]") {
    const double a = compute_eot(fringes(12345.0, 1000, 500.0, 1000.0, 0.5), {}, 8);
    const double b = compute_eot(fringes(12345.0, 1000, 500.0, 1000.0, 0.9), {}, 8);
    CHECK(a == Approx(b).epsilon(1e-9));
}

TEST_CASE("compute_eot error paths", "[spectra][rifts]") {
    auto constant = flat(0.4);
    constant.kind = SpectrumKind::reflectance_fraction;
    try {
        compute_eot(constant, {500.0, 1000.0}, 8);
        FAIL("expected NoFringePeak");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::NoFringePeak);
    }
    try {
        compute_eot(fringes(10000.0), {400.0, 1000.0}, 8);
        FAIL("expected WindowOutOfRange");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::WindowOutOfRange);
    }
}

TEST_CASE("build_response_curve normalizes to the first EOT", "[spectra]") {
    auto c = build_response_curve({{0, 1, 2}, {10000, 10100, 10200}}, {"a", 1.0, CurveSource::experimental});
    CHECK(c.response[0] == 0.0);
    CHECK(c.response[1] == Approx(0.01));
    CHECK(c.response[2] == Approx(0.02));

    c = build_response_curve({{0, 1, 2}, {5000, 5000, 5000}}, {});
    CHECK(c.response == std::vector<double>{0, 0, 0});

    c = build_response_curve({{0, 1}, {10000, 9900}}, {});
    CHECK(c.response[1] == Approx(-0.01));

    try {
        build_response_curve({{0, 1}, {0, 1}}, {});
        FAIL("expected DegenerateBaseline");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::DegenerateBaseline);
    }
}

TEST_CASE("build_response_curve is scale invariant", "[spectra][property]") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(9000.0, 11000.0);
    EotSeries e;
    for (int i = 0; i < 50; ++i) {
        e.times_s.push_back(i * 10.0);
        e.eot_nm.push_back(u(rng));
    }
    const auto base = build_response_curve(e, {});
    for (double k : {1e-3, 0.7, 42.0}) {
        auto scaled = e;
        for (double& v : scaled.eot_nm) v *= k;
        const auto c = build_response_curve(scaled, {});
        for (std::size_t i = 0; i < c.size(); ++i)
            CHECK(c.response[i] == Approx(base.response[i]).margin(1e-14));
    }
}
