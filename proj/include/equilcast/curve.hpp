#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"

namespace equilcast {

enum class CurveSource { experimental, simulated };

inline std::string to_string(CurveSource s) {
    return s == CurveSource::experimental ? "experimental" : "simulated";
}

inline CurveSource curve_source_from_string(const std::string& s) {
    if (s == "experimental") return CurveSource::experimental;
    if (s == "simulated") return CurveSource::simulated;
    fail(ErrorKind::ParseError, "unknown curve source '" + s + "'");
}

struct CurveMeta {
    std::string id;
    double concentration_mg_per_ml = 0.0;
    CurveSource source = CurveSource::experimental;

    bool operator==(const CurveMeta&) const = default;
};

/// Fractional EOT change sampled over time. response[0] is the baseline (0 for
/// curves built from EOT series).
struct ResponseCurve {
    std::vector<double> times_s;
    std::vector<double> response;
    CurveMeta meta;

    std::size_t size() const noexcept { return response.size(); }
    double final_value() const { return response.back(); }

    bool operator==(const ResponseCurve&) const = default;
};

inline void validate(const ResponseCurve& curve) {
    require(curve.times_s.size() == curve.response.size(), ErrorKind::ShapeMismatch,
            "curve '" + curve.meta.id + "': times and response lengths differ");
    for (std::size_t i = 0; i < curve.size(); ++i) {
        require(std::isfinite(curve.times_s[i]) && std::isfinite(curve.response[i]),
                ErrorKind::NonFiniteInput, "curve '" + curve.meta.id + "': non-finite sample");
        if (i > 0)
            require(curve.times_s[i] > curve.times_s[i - 1], ErrorKind::InvalidArgument,
                    "curve '" + curve.meta.id + "': times not strictly increasing");
    }
}

namespace detail {

inline std::string format_double(double v) {
    char buf[32];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, end);
}

inline double parse_double(std::string_view text, const std::string& where) {
    while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
    while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r'))
        text.remove_suffix(1);
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || ptr != text.data() + text.size())
        fail(ErrorKind::ParseError, where + ": cannot parse number '" + std::string(text) + "'");
    return value;
}

/// Reads a two-column numeric CSV with the exact header given.
inline std::pair<std::vector<double>, std::vector<double>> read_two_column_csv(
    const std::filesystem::path& path, std::string_view header) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::IoError, "cannot open " + path.string());
    std::string line;
    std::size_t line_no = 1;
    if (!std::getline(in, line)) fail(ErrorKind::ParseError, path.string() + ":1: empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != header)
        fail(ErrorKind::ParseError,
             path.string() + ":1: expected header '" + std::string(header) + "'");
    std::vector<double> a, b;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto comma = line.find(',');
        const std::string where = path.string() + ":" + std::to_string(line_no);
        if (comma == std::string::npos) fail(ErrorKind::ParseError, where + ": expected two columns");
        a.push_back(parse_double(std::string_view(line).substr(0, comma), where));
        b.push_back(parse_double(std::string_view(line).substr(comma + 1), where));
    }
    return {std::move(a), std::move(b)};
}

}  // namespace detail

inline constexpr std::string_view kCurveCsvHeader = "t_seconds,response";

/// Shortest round-trip formatting, so save/load is lossless.
inline void write_curve_csv(const ResponseCurve& curve, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) fail(ErrorKind::IoError, "cannot write " + path.string());
    out << kCurveCsvHeader << '\n';
    for (std::size_t i = 0; i < curve.size(); ++i)
        out << detail::format_double(curve.times_s[i]) << ','
            << detail::format_double(curve.response[i]) << '\n';
    if (!out) fail(ErrorKind::IoError, "write failed for " + path.string());
}

inline ResponseCurve read_curve_csv(const std::filesystem::path& path, CurveMeta meta = {}) {
    auto [t, r] = detail::read_two_column_csv(path, kCurveCsvHeader);
    ResponseCurve curve{std::move(t), std::move(r), std::move(meta)};
    if (curve.meta.id.empty()) curve.meta.id = path.stem().string();
    validate(curve);
    return curve;
}

}  // namespace equilcast
