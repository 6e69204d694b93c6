#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "curve.hpp"
#include "error.hpp"

namespace equilcast::datahub {

enum class Split { train, validation, test };

inline std::string to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::validation: return "validation";
        case Split::test: return "test";
    }
    return "train";
}

inline Split split_from_string(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "validation" || s == "val") return Split::validation;
    if (s == "test") return Split::test;
    fail(ErrorKind::ParseError, "unknown split '" + s + "'");
}

struct MinMaxStats {
    double min_response = 0.0;
    double max_response = 1.0;
    std::string source = "train";

    double range() const { return max_response - min_response; }
    bool operator==(const MinMaxStats&) const = default;
};

struct Corpus {
    std::vector<ResponseCurve> curves;
    std::map<std::string, Split> splits;
    std::optional<MinMaxStats> normalizer;

    bool operator==(const Corpus&) const = default;

    const ResponseCurve* find(const std::string& id) const {
        for (const auto& c : curves)
            if (c.meta.id == id) return &c;
        return nullptr;
    }

    std::vector<const ResponseCurve*> in_split(Split s) const {
        std::vector<const ResponseCurve*> out;
        for (const auto& c : curves) {
            auto it = splits.find(c.meta.id);
            if (it != splits.end() && it->second == s) out.push_back(&c);
        }
        return out;
    }
};

inline void check_unique_ids(const std::vector<ResponseCurve>& curves) {
    std::set<std::string> seen;
    for (const auto& c : curves)
        require(seen.insert(c.meta.id).second, ErrorKind::DuplicateId, "duplicate curve id '" + c.meta.id + "'");
}

/// Stratum label: the shortest decimal form of the concentration.
inline std::string stratum_key(double concentration_mg_per_ml) { return detail::format_double(concentration_mg_per_ml); }

struct SplitRatio {
    unsigned train = 3;
    unsigned validation = 1;
    unsigned test = 1;
};

/// Per-stratum counts by largest-remainder rounding. Ties in the remainder go
/// to train, then validation, then test.
inline std::array<std::size_t, 3> allocate_counts(std::size_t n, SplitRatio r) {
    const std::array<unsigned, 3> w{r.train, r.validation, r.test};
    const unsigned total = w[0] + w[1] + w[2];
    std::array<std::size_t, 3> out{};
    std::array<std::size_t, 3> rem{};
    std::size_t assigned = 0;
    for (int k = 0; k < 3; ++k) {
        out[k] = n * w[k] / total;
        rem[k] = n * w[k] % total;
        assigned += out[k];
    }
    std::array<int, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return rem[a] > rem[b]; });
    for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++out[order[i % 3]];
    return out;
}

struct SplitResult {
    std::map<std::string, Split> assignment;
    std::vector<std::string> warnings;
};

/// Seeded shuffle within each concentration stratum, then largest-remainder
/// allocation of the ratio. Strata and ids are sorted first, so the result
/// does not depend on curve order.
inline SplitResult stratified_split(const Corpus& corpus, std::uint64_t seed, SplitRatio ratio = {}) {
    require(!corpus.curves.empty(), ErrorKind::EmptyCorpus, "cannot split an empty corpus");
    require(ratio.train + ratio.validation + ratio.test > 0, ErrorKind::InvalidArgument, "split ratio is all zero");
    check_unique_ids(corpus.curves);
    std::map<double, std::vector<std::string>> strata;
    for (const auto& c : corpus.curves) strata[c.meta.concentration_mg_per_ml].push_back(c.meta.id);

    SplitResult out;
    std::mt19937_64 rng(seed);
    for (auto& [conc, ids] : strata) {
        std::sort(ids.begin(), ids.end());
        std::shuffle(ids.begin(), ids.end(), rng);
        if (ids.size() < 5)
            out.warnings.push_back("stratum " + stratum_key(conc) + " mg/mL has only " + std::to_string(ids.size()) +
                                   " curves");
        const auto counts = allocate_counts(ids.size(), ratio);
        std::size_t i = 0;
        for (int k = 0; k < 3; ++k)
            for (std::size_t j = 0; j < counts[k]; ++j, ++i) out.assignment[ids[i]] = static_cast<Split>(k);
    }
    return out;
}

/// Min and max over every sample of every train-split curve.
inline MinMaxStats fit_normalizer(const Corpus& corpus) {
    const auto train = corpus.in_split(Split::train);
    require(!train.empty(), ErrorKind::EmptyCorpus, "fit_normalizer: no curves in the train split");
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto* c : train)
        for (double v : c->response) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    require(hi > lo, ErrorKind::DegenerateRange, "fit_normalizer: train responses are constant");
    return {lo, hi, "train split (" + std::to_string(train.size()) + " curves)"};
}

enum class Direction { forward, inverse };

inline double normalize_value(double x, const MinMaxStats& s) { return (x - s.min_response) / s.range(); }
inline double denormalize_value(double z, const MinMaxStats& s) { return z * s.range() + s.min_response; }

/// Min-max scaling without clipping; inverse undoes forward.
inline ResponseCurve apply_normalizer(ResponseCurve curve, const MinMaxStats& stats, Direction dir = Direction::forward) {
    require(stats.max_response > stats.min_response, ErrorKind::DegenerateRange, "normalizer range is empty");
    for (double& v : curve.response) v = dir == Direction::forward ? normalize_value(v, stats) : denormalize_value(v, stats);
    return curve;
}

inline nlohmann::json to_json(const MinMaxStats& s) {
    return {{"min_response", s.min_response}, {"max_response", s.max_response}, {"source", s.source}};
}

inline MinMaxStats min_max_stats_from_json(const nlohmann::json& j) {
    MinMaxStats s;
    try {
        s.min_response = j.at("min_response").get<double>();
        s.max_response = j.at("max_response").get<double>();
        s.source = j.value("source", std::string("train"));
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::ParseError, std::string("normalizer: ") + e.what());
    }
    require(s.max_response > s.min_response, ErrorKind::DegenerateRange, "normalizer: max must exceed min");
    return s;
}

inline constexpr const char* kManifestName = "manifest.json";

/// Writes manifest.json plus curves/<id>.csv. The manifest is a plain array of
/// entries, or {curves, normalizer} when the corpus carries stats.
inline void save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
    check_unique_ids(corpus.curves);
    std::filesystem::create_directories(dir / "curves");
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& c : corpus.curves) {
        const std::string file = "curves/" + c.meta.id + ".csv";
        write_curve_csv(c, dir / file);
        nlohmann::json e{{"id", c.meta.id},
                         {"concentration_mg_per_ml", c.meta.concentration_mg_per_ml},
                         {"file", file},
                         {"source", to_string(c.meta.source)}};
        if (auto it = corpus.splits.find(c.meta.id); it != corpus.splits.end()) e["split"] = to_string(it->second);
        entries.push_back(std::move(e));
    }
    nlohmann::json manifest = entries;
    if (corpus.normalizer) manifest = {{"curves", entries}, {"normalizer", to_json(*corpus.normalizer)}};
    std::ofstream os(dir / kManifestName);
    require(static_cast<bool>(os), ErrorKind::IoError, "cannot write " + (dir / kManifestName).string());
    os << manifest.dump(1) << '\n';
}

inline Corpus load_corpus(const std::filesystem::path& dir) {
    const auto path = dir / kManifestName;
    std::ifstream is(path);
    require(static_cast<bool>(is), ErrorKind::IoError, "cannot open " + path.string());
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::ParseError, path.string() + ": " + e.what());
    }
    Corpus corpus;
    const nlohmann::json* entries = &manifest;
    if (manifest.is_object()) {
        require(manifest.contains("curves"), ErrorKind::ParseError, path.string() + ": missing 'curves'");
        entries = &manifest["curves"];
        if (manifest.contains("normalizer")) corpus.normalizer = min_max_stats_from_json(manifest["normalizer"]);
    }
    require(entries->is_array(), ErrorKind::ParseError, path.string() + ": manifest must be an array of entries");
    std::set<std::string> seen;
    for (std::size_t i = 0; i < entries->size(); ++i) {
        const auto& e = (*entries)[i];
        const std::string where = path.string() + ": entry " + std::to_string(i);
        CurveMeta meta;
        std::string file;
        std::optional<std::string> split;
        try {
            meta.id = e.at("id").get<std::string>();
            meta.concentration_mg_per_ml = e.at("concentration_mg_per_ml").get<double>();
            file = e.at("file").get<std::string>();
            if (e.contains("source")) meta.source = curve_source_from_string(e["source"].get<std::string>());
            if (e.contains("split") && !e["split"].is_null()) split = e["split"].get<std::string>();
        } catch (const nlohmann::json::exception& ex) {
            fail(ErrorKind::ParseError, where + ": " + ex.what());
        }
        require(!meta.id.empty(), ErrorKind::ParseError, where + ": empty id");
        require(seen.insert(meta.id).second, ErrorKind::DuplicateId, where + ": duplicate curve id '" + meta.id + "'");
        const auto csv = dir / file;
        require(std::filesystem::exists(csv), ErrorKind::MissingCurveFile,
                "curve '" + meta.id + "': file not found: " + csv.string());
        corpus.curves.push_back(read_curve_csv(csv, meta));
        if (split) corpus.splits[meta.id] = split_from_string(*split);
    }
    return corpus;
}

}  // namespace equilcast::datahub
