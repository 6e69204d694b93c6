#pragma once

// Reflectance calibration, RIFTS effective-optical-thickness extraction and
// normalized response curves.

#include <algorithm>
#include <cmath>
#include <complex>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "curve.hpp"
#include "error.hpp"

namespace equilcast::spectra {

enum class SpectrumKind { raw_counts, reflectance_fraction };

struct Spectrum {
    std::vector<double> wavelengths_nm;
    std::vector<double> values;
    SpectrumKind kind = SpectrumKind::raw_counts;
};

struct EotSeries {
    std::vector<double> times_s;
    std::vector<double> eot_nm;
};

struct Window {
    double lo_nm = 500.0;
    double hi_nm = 1000.0;
};

inline constexpr double kReflectanceClipMax = 1.5;
inline constexpr int kDefaultZeroPad = 8;

inline void validate(const Spectrum& s) {
    require(s.wavelengths_nm.size() == s.values.size(), ErrorKind::ShapeMismatch,
            "spectrum wavelength and value counts differ");
    require(s.wavelengths_nm.size() >= 2, ErrorKind::InvalidArgument, "spectrum needs >= 2 samples");
    for (std::size_t i = 1; i < s.wavelengths_nm.size(); ++i)
        require(s.wavelengths_nm[i] > s.wavelengths_nm[i - 1], ErrorKind::InvalidArgument,
                "spectrum wavelengths must be strictly increasing");
}

/// (raw - dark) / (reference - dark), clipped to [0, 1.5].
inline Spectrum calibrate_reflectance(const Spectrum& raw, const Spectrum& dark,
                                      const Spectrum& reference) {
    validate(raw);
    validate(dark);
    validate(reference);
    require(raw.wavelengths_nm == dark.wavelengths_nm &&
                raw.wavelengths_nm == reference.wavelengths_nm,
            ErrorKind::GridMismatch, "raw, dark and reference spectra must share one wavelength grid");
    Spectrum out{raw.wavelengths_nm, std::vector<double>(raw.values.size()),
                 SpectrumKind::reflectance_fraction};
    for (std::size_t i = 0; i < raw.values.size(); ++i) {
        const double span = reference.values[i] - dark.values[i];
        if (!(span > 0.0))
            fail(ErrorKind::CalibrationDegenerate,
                 "reference <= dark at " + std::to_string(raw.wavelengths_nm[i]) + " nm");
        out.values[i] = std::clamp((raw.values[i] - dark.values[i]) / span, 0.0, kReflectanceClipMax);
    }
    return out;
}

namespace detail {

inline double interpolate(const std::vector<double>& x, const std::vector<double>& y, double at) {
    auto hi = std::upper_bound(x.begin(), x.end(), at);
    if (hi == x.begin()) return y.front();
    if (hi == x.end()) return y.back();
    const auto j = static_cast<std::size_t>(hi - x.begin());
    const double w = (at - x[j - 1]) / (x[j] - x[j - 1]);
    return y[j - 1] + w * (y[j] - y[j - 1]);
}

inline double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    return *mid;
}

}  // namespace detail

/// RIFTS: the fringe frequency of R(1/lambda) equals 2nL.
///
/// Resamples the window onto a uniform wavenumber grid, removes the mean,
/// applies a Hann window, zero-pads, and locates the strongest FFT bin above
/// the DC leakage lobe. The peak is refined with a 3-point parabola through the
/// log magnitudes.
inline double compute_eot(const Spectrum& spec, Window window = {},
                          int zero_pad_factor = kDefaultZeroPad) {
    validate(spec);
    require(spec.kind == SpectrumKind::reflectance_fraction, ErrorKind::InvalidArgument,
            "compute_eot expects a calibrated reflectance spectrum");
    require(zero_pad_factor >= 1, ErrorKind::InvalidArgument, "zero_pad_factor must be positive");
    require(window.lo_nm > 0.0 && window.hi_nm > window.lo_nm, ErrorKind::WindowOutOfRange,
            "window must satisfy 0 < lo < hi");
    if (window.lo_nm < spec.wavelengths_nm.front() || window.hi_nm > spec.wavelengths_nm.back())
        fail(ErrorKind::WindowOutOfRange, "window [" + std::to_string(window.lo_nm) + ", " +
                                              std::to_string(window.hi_nm) +
                                              "] nm outside the spectrum");

    const auto in_window = std::count_if(spec.wavelengths_nm.begin(), spec.wavelengths_nm.end(),
                                         [&](double w) { return w >= window.lo_nm && w <= window.hi_nm; });
    const std::size_t n = std::max<std::size_t>(static_cast<std::size_t>(in_window), 64);

    const double k_lo = 1.0 / window.hi_nm;
    const double k_hi = 1.0 / window.lo_nm;
    const double dk = (k_hi - k_lo) / static_cast<double>(n - 1);

    std::vector<double> samples(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double k = k_lo + dk * static_cast<double>(i);
        samples[i] = detail::interpolate(spec.wavelengths_nm, spec.values, 1.0 / k);
    }
    double mean = 0.0;
    for (double v : samples) mean += v;
    mean /= static_cast<double>(n);
    double spread = 0.0;
    for (double v : samples) spread = std::max(spread, std::abs(v - mean));
    if (spread <= 1e-9 * std::max(1.0, std::abs(mean)))
        fail(ErrorKind::NoFringePeak, "flat spectrum inside the window");
    for (std::size_t i = 0; i < n; ++i) {
        const double hann = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                                 static_cast<double>(n - 1));
        samples[i] = (samples[i] - mean) * hann;
    }

    const std::size_t padded = n * static_cast<std::size_t>(zero_pad_factor);
    samples.resize(padded, 0.0);
    Eigen::FFT<double> fft;
    std::vector<std::complex<double>> spectrum;
    fft.fwd(spectrum, samples);

    const std::size_t half = padded / 2;
    std::vector<double> magnitude(half + 1);
    for (std::size_t m = 0; m <= half; ++m) magnitude[m] = std::abs(spectrum[m]);

    // The Hann main lobe spans +-2 unpadded bins around DC.
    const std::size_t first = 2 * static_cast<std::size_t>(zero_pad_factor) + 1;
    require(first + 1 < half, ErrorKind::NoFringePeak, "window too short for fringe analysis");
    std::size_t peak = first;
    for (std::size_t m = first; m < half; ++m)
        if (magnitude[m] > magnitude[peak]) peak = m;

    const std::size_t lobe = 2 * static_cast<std::size_t>(zero_pad_factor);
    std::vector<double> off_peak;
    off_peak.reserve(half);
    for (std::size_t m = first; m < half; ++m)
        if (m + lobe < peak || m > peak + lobe) off_peak.push_back(magnitude[m]);
    const double floor = detail::median(std::move(off_peak));
    if (!(magnitude[peak] > 3.0 * floor) || magnitude[peak] <= 0.0)
        fail(ErrorKind::NoFringePeak, "no fringe peak above 3x the median off-peak magnitude");

    double offset = 0.0;
    const double a = magnitude[peak - 1], b = magnitude[peak], c = magnitude[peak + 1];
    if (a > 0.0 && c > 0.0) {
        const double la = std::log(a), lb = std::log(b), lc = std::log(c);
        const double denom = la - 2.0 * lb + lc;
        if (denom < 0.0) offset = std::clamp(0.5 * (la - lc) / denom, -0.5, 0.5);
    }
    const double bin = static_cast<double>(peak) + offset;
    return bin / (static_cast<double>(padded) * dk);
}

/// (EOT_n - EOT_0) / EOT_0 per sample.
inline ResponseCurve build_response_curve(const EotSeries& eots, CurveMeta meta) {
    require(eots.times_s.size() == eots.eot_nm.size(), ErrorKind::ShapeMismatch,
            "EOT series times and values differ in length");
    require(!eots.eot_nm.empty(), ErrorKind::InvalidArgument, "empty EOT series");
    const double base = eots.eot_nm.front();
    if (!(base > 0.0)) fail(ErrorKind::DegenerateBaseline, "first EOT must be positive");
    ResponseCurve curve{eots.times_s, {}, std::move(meta)};
    curve.response.reserve(eots.eot_nm.size());
    for (double e : eots.eot_nm) curve.response.push_back((e - base) / base);
    curve.response.front() = 0.0;
    return curve;
}

inline constexpr std::string_view kSpectrumCsvHeader = "wavelength_nm,value";

inline Spectrum read_spectrum_csv(const std::filesystem::path& path,
                                  SpectrumKind kind = SpectrumKind::raw_counts) {
    auto [w, v] = equilcast::detail::read_two_column_csv(path, kSpectrumCsvHeader);
    Spectrum s{std::move(w), std::move(v), kind};
    validate(s);
    return s;
}

inline void write_spectrum_csv(const Spectrum& s, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) fail(ErrorKind::IoError, "cannot write " + path.string());
    out << kSpectrumCsvHeader << '\n';
    for (std::size_t i = 0; i < s.values.size(); ++i)
        out << equilcast::detail::format_double(s.wavelengths_nm[i]) << ','
            << equilcast::detail::format_double(s.values[i]) << '\n';
}

}  // namespace equilcast::spectra
