#include <algorithm>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include <equilcast/datahub.hpp>
#include <equilcast/ensemble.hpp>
#include <equilcast/metrics.hpp>
#include <equilcast/plots.hpp>
#include <equilcast/simkit/corpus.hpp>
#include <equilcast/simkit/distribution.hpp>
#include <equilcast/simkit/isotherm.hpp>
#include <equilcast/simkit/lda.hpp>
#include <equilcast/simkit/param_fit.hpp>
#include <equilcast/spectra.hpp>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace equilcast;

namespace {

json read_json(const fs::path& path) {
    std::ifstream is(path);
    require(static_cast<bool>(is), ErrorKind::IoError, "cannot open " + path.string());
    try {
        return json::parse(is);
    } catch (const json::exception& e) {
        fail(ErrorKind::ParseError, path.string() + ": " + e.what());
    }
}

void write_json(const json& j, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(path);
    require(static_cast<bool>(os), ErrorKind::IoError, "cannot write " + path.string());
    os << j.dump(1) << '\n';
}

std::pair<double, double> parse_range(const std::string& text, const std::string& flag) {
    const auto colon = text.find(':');
    require(colon != std::string::npos, ErrorKind::InvalidArgument, flag + " expects LO:HI, got '" + text + "'");
    const double lo = detail::parse_double(text.substr(0, colon), flag);
    const double hi = detail::parse_double(text.substr(colon + 1), flag);
    return {lo, hi};
}

void require_dir(const fs::path& p, const std::string& flag) {
    require(fs::is_directory(p), ErrorKind::IoError, flag + ": not a directory: " + p.string());
}

void require_file(const fs::path& p, const std::string& flag) {
    require(fs::is_regular_file(p), ErrorKind::IoError, flag + ": file not found: " + p.string());
}

struct Verbosity {
    bool quiet = false;
    void log(const std::string& s) const {
        if (!quiet) std::cerr << s << '\n';
    }
};

// rifts

struct SensorInfo {
    std::string id;
    double concentration = 0.0;
};

ResponseCurve rifts_sensor(const fs::path& dir, const spectra::Spectrum& dark, const spectra::Spectrum& reference,
                           spectra::Window window, SensorInfo info) {
    if (fs::exists(dir / "sensor.json")) {
        const auto j = read_json(dir / "sensor.json");
        info.id = j.value("id", info.id);
        info.concentration = j.value("concentration_mg_per_ml", info.concentration);
    }
    std::vector<std::pair<double, fs::path>> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (!e.is_regular_file() || e.path().extension() != ".csv") continue;
        const auto stem = e.path().stem().string();
        files.emplace_back(detail::parse_double(stem, e.path().string() + " (file name is the time in seconds)"), e.path());
    }
    require(!files.empty(), ErrorKind::InvalidArgument, "no spectra in " + dir.string());
    std::sort(files.begin(), files.end());
    spectra::EotSeries series;
    for (const auto& [t, path] : files) {
        const auto raw = spectra::read_spectrum_csv(path);
        const auto cal = spectra::calibrate_reflectance(raw, dark, reference);
        series.times_s.push_back(t);
        series.eot_nm.push_back(spectra::compute_eot(cal, window));
    }
    return spectra::build_response_curve(series, {info.id, info.concentration, CurveSource::experimental});
}

int cmd_rifts(const fs::path& spectra_dir, const fs::path& dark_file, const fs::path& ref_file, const std::string& window_text,
              double concentration, const fs::path& out, const Verbosity& v) {
    require_dir(spectra_dir, "--spectra");
    require_file(dark_file, "--dark");
    require_file(ref_file, "--reference");
    const auto [lo, hi] = parse_range(window_text, "--window");
    const auto dark = spectra::read_spectrum_csv(dark_file);
    const auto reference = spectra::read_spectrum_csv(ref_file);

    std::vector<fs::path> sensors;
    for (const auto& e : fs::directory_iterator(spectra_dir))
        if (e.is_directory()) sensors.push_back(e.path());
    std::sort(sensors.begin(), sensors.end());
    if (sensors.empty()) sensors.push_back(spectra_dir);

    datahub::Corpus corpus;
    for (const auto& dir : sensors) {
        const auto name = fs::weakly_canonical(dir).filename().string();
        corpus.curves.push_back(rifts_sensor(dir, dark, reference, {lo, hi}, {name, concentration}));
        v.log("rifts: " + corpus.curves.back().meta.id + " (" + std::to_string(corpus.curves.back().size()) + " spectra)");
    }
    datahub::save_corpus(corpus, out);
    return 0;
}

// simulate

int cmd_simulate(const std::optional<fs::path>& dist_file, std::size_t n, int steps, double duration_h,
                 const std::string& snr_text, std::uint64_t seed, const fs::path& out, const Verbosity& v) {
    if (dist_file) require_file(*dist_file, "--dist");
    simkit::ParameterDistribution dist = simkit::reference_distribution();
    if (dist_file) {
        auto j = read_json(*dist_file);
        if (j.contains("distribution")) j = j["distribution"];
        dist = simkit::parameter_distribution_from_json(j);
    }
    simkit::CorpusSpec spec;
    spec.count = n;
    spec.steps = steps;
    spec.duration_h = duration_h;
    std::tie(spec.snr_lo, spec.snr_hi) = parse_range(snr_text, "--snr");
    spec.seed = seed;
    const auto sims = simkit::generate_corpus(dist, spec);

    datahub::Corpus corpus;
    json params = json::array();
    for (const auto& s : sims) {
        corpus.curves.push_back(s.curve);
        params.push_back({{"id", s.curve.meta.id}, {"snr", s.snr}, {"params", simkit::to_json(s.params)}});
    }
    datahub::save_corpus(corpus, out);
    write_json({{"seed", seed}, {"distribution", simkit::to_json(dist)}, {"curves", params}}, out / "simulation.json");
    v.log("simulate: wrote " + std::to_string(sims.size()) + " curves to " + out.string());
    return 0;
}

// fit-params

int cmd_fit_params(const fs::path& curves_dir, const fs::path& out, int restarts, int iterations, std::uint64_t seed,
                   unsigned jobs, const Verbosity& v) {
    require_dir(curves_dir, "--curves");
    const auto corpus = datahub::load_corpus(curves_dir);
    std::vector<const ResponseCurve*> targets;
    for (const auto& c : corpus.curves)
        if (c.meta.concentration_mg_per_ml > 0.0) targets.push_back(&c);
    require(!targets.empty(), ErrorKind::InsufficientFits, "no curves with nonzero concentration to fit");

    std::vector<simkit::ParameterFit> fits(targets.size());
    std::vector<std::exception_ptr> errors(targets.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < targets.size(); i = next++) {
            try {
                simkit::FitOptions opts;
                opts.restarts = restarts;
                opts.iterations = iterations;
                opts.seed = derive_seed(seed, 0x46495450u, i);
                fits[i] = simkit::fit_params_to_curve(*targets[i], {targets[i]->meta.concentration_mg_per_ml}, opts);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (unsigned k = 1; k < std::max(1u, jobs); ++k) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);

    json fit_list = json::array();
    std::vector<simkit::SimulationParameters> sets;
    std::vector<Eigen::VectorXd> samples;
    std::vector<double> labels;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        fit_list.push_back({{"id", targets[i]->meta.id}, {"mse", fits[i].mse}, {"params", simkit::to_json(fits[i].params)}});
        sets.push_back(fits[i].params);
        const auto lg = simkit::to_log10(fits[i].params);
        samples.push_back(Eigen::Map<const Eigen::VectorXd>(lg.data(), static_cast<Eigen::Index>(lg.size())));
        labels.push_back(targets[i]->meta.concentration_mg_per_ml);
    }
    json result{{"distribution", simkit::to_json(simkit::fit_param_distribution(sets))}, {"fits", fit_list}};
    try {
        const auto lda = simkit::lda_project(samples, labels);
        json pts = json::array();
        for (std::size_t i = 0; i < lda.points.size(); ++i)
            pts.push_back({{"id", targets[i]->meta.id}, {"concentration_mg_per_ml", labels[i]}, {"x", lda.points[i][0]},
                           {"y", lda.points[i][1]}});
        result["lda"] = {{"eigenvalues", {lda.eigenvalues(0), lda.eigenvalues(1)}}, {"points", pts}};
    } catch (const Error& e) {
        result["lda"] = nullptr;
        v.log(std::string("fit-params: LDA skipped: ") + e.what());
    }
    write_json(result, out);
    v.log("fit-params: fitted " + std::to_string(sets.size()) + " curves");
    return 0;
}

// fit-isotherm

int cmd_fit_isotherm(const fs::path& curves_dir, const fs::path& out, const Verbosity& v) {
    require_dir(curves_dir, "--curves");
    const auto corpus = datahub::load_corpus(curves_dir);
    std::vector<simkit::IsothermPoint> points;
    for (const auto& c : corpus.curves) points.push_back({c.meta.concentration_mg_per_ml, c.final_value()});
    const auto fit = simkit::fit_isotherm(points);
    json strata = json::array();
    std::vector<const ResponseCurve*> all;
    for (const auto& c : corpus.curves) all.push_back(&c);
    for (const auto& r : plots::isotherm_rows(all))
        strata.push_back({{"concentration_mg_per_ml", r.concentration}, {"n", r.n}, {"mean", r.mean}, {"std", r.std}});
    write_json({{"K", fit.params.K}, {"a", fit.params.a}, {"g", fit.params.g}, {"residual", fit.residual}, {"strata", strata}},
               out);
    v.log("fit-isotherm: K=" + std::to_string(fit.params.K) + " a=" + std::to_string(fit.params.a) +
          " g=" + std::to_string(fit.params.g));
    return 0;
}

// Shared training setup.

struct TrainOptions {
    std::optional<fs::path> net_file, train_file;
    std::vector<int> layers;
    std::optional<int> epochs, batch, patience;
    std::optional<double> lr, variance_floor;
    std::optional<std::uint64_t> split_seed;
    unsigned jobs = 1;
};

void add_train_options(CLI::App* sub, TrainOptions& o) {
    sub->add_option("--net", o.net_file, "network config JSON");
    sub->add_option("--train-config", o.train_file, "training config JSON");
    sub->add_option("--layers", o.layers, "LSTM layer widths, e.g. 16,32")->delimiter(',');
    sub->add_option("--epochs", o.epochs);
    sub->add_option("--batch-size", o.batch);
    sub->add_option("--lr", o.lr, "learning rate");
    sub->add_option("--patience", o.patience, "early-stopping patience in epochs (0 = off)");
    sub->add_option("--variance-floor", o.variance_floor);
    sub->add_option("--split-seed", o.split_seed, "seed for the stratified split (defaults to --seed)");
    sub->add_option("--jobs", o.jobs, "worker threads")->check(CLI::PositiveNumber);
}

std::pair<neural::NetworkConfig, neural::TrainConfig> resolve_configs(const TrainOptions& o, int steps) {
    neural::NetworkConfig net;
    neural::TrainConfig cfg;
    if (o.net_file) net = neural::network_config_from_json(read_json(*o.net_file));
    if (o.train_file) cfg = neural::train_config_from_json(read_json(*o.train_file));
    if (!o.layers.empty()) net.lstm_layer_sizes = o.layers;
    if (o.variance_floor) net.variance_floor = *o.variance_floor;
    net.sequence_length = steps;
    if (o.epochs) cfg.epochs = *o.epochs;
    if (o.batch) cfg.batch_size = *o.batch;
    if (o.lr) cfg.learning_rate = *o.lr;
    if (o.patience) cfg.patience = *o.patience;
    neural::validate(net);
    neural::validate(cfg);
    return {net, cfg};
}

struct PreparedCorpus {
    datahub::Corpus corpus;
    datahub::MinMaxStats stats;
    std::vector<const ResponseCurve*> train, validation, test;
};

/// Keeps a split stored in the manifest, otherwise splits with the seed.
PreparedCorpus prepare(const fs::path& dir, std::uint64_t split_seed, const Verbosity& v) {
    PreparedCorpus p;
    p.corpus = datahub::load_corpus(dir);
    if (p.corpus.splits.size() != p.corpus.curves.size()) {
        auto r = datahub::stratified_split(p.corpus, split_seed);
        for (const auto& w : r.warnings) v.log("warning: " + w);
        p.corpus.splits = std::move(r.assignment);
    }
    p.stats = datahub::fit_normalizer(p.corpus);
    p.corpus.normalizer = p.stats;
    p.train = p.corpus.in_split(datahub::Split::train);
    p.validation = p.corpus.in_split(datahub::Split::validation);
    p.test = p.corpus.in_split(datahub::Split::test);
    return p;
}

json split_json(const datahub::Corpus& c) {
    json j = json::object();
    for (const auto& [id, s] : c.splits) j[id] = datahub::to_string(s);
    return j;
}

std::function<void(const ensemble::TrainProgress&)> progress_logger(const Verbosity& v) {
    return [v](const ensemble::TrainProgress& p) {
        if (p.diverged)
            v.log("member " + std::to_string(p.member) + ": diverged");
        else
            v.log("member " + std::to_string(p.member) + ": best epoch " + std::to_string(p.best_epoch) + ", val NLL " +
                  std::to_string(p.best_val_loss));
    };
}

double duration_of(const std::vector<const ResponseCurve*>& curves) {
    const auto& t = curves.front()->times_s;
    return t.back() - t.front();
}

// train

int cmd_train(const fs::path& curves_dir, std::size_t m, std::uint64_t seed, const TrainOptions& o, const fs::path& out,
              const Verbosity& v) {
    require_dir(curves_dir, "--curves");
    auto p = prepare(curves_dir, o.split_seed.value_or(seed), v);
    require(!p.train.empty(), ErrorKind::EmptyCorpus, "train split is empty");
    const auto [net, cfg] = resolve_configs(o, static_cast<int>(p.train.front()->size()));
    const auto train = ensemble::to_sequence_set(p.train, p.stats);
    const auto val = ensemble::to_sequence_set(p.validation, p.stats);
    v.log("train: " + std::to_string(p.train.size()) + "/" + std::to_string(p.validation.size()) + "/" +
          std::to_string(p.test.size()) + " curves, " + std::to_string(m) + " members");
    auto model = ensemble::train_ensemble(train, val, net, cfg, m, seed, p.stats, o.jobs, progress_logger(v));
    if (!p.validation.empty())
        model.policy = metrics::to_json(metrics::derive_default_policy(ensemble::predict_set(model, val), duration_of(p.validation)));
    ensemble::save_ensemble(model, out);
    write_json(split_json(p.corpus), out / "split.json");
    return 0;
}

// predict

metrics::StoppingPolicy resolve_policy(const std::optional<fs::path>& file, const ensemble::EnsembleModel& model) {
    if (file) return metrics::stopping_policy_from_json(read_json(*file));
    if (!model.policy.is_null()) return metrics::stopping_policy_from_json(model.policy);
    return {};
}

int cmd_predict(const fs::path& model_dir, const fs::path& curve_file, const std::optional<fs::path>& policy_file) {
    require_dir(model_dir, "--model");
    require_file(curve_file, "--curve");
    if (policy_file) require_file(*policy_file, "--policy");
    const auto model = ensemble::load_ensemble(model_dir);
    const auto policy = resolve_policy(policy_file, model);
    const auto curve = read_curve_csv(curve_file, {curve_file.stem().string(), 0.0, CurveSource::experimental});
    const auto normalized = ensemble::predict_stream(model, curve);
    const auto raw = ensemble::denormalize(normalized, model.normalizer);
    // The decision at step t only reads mu* and var* up to t, so running it once
    // over the full stream gives the same first return as re-running per step.
    const auto decision = metrics::stopping_decision(curve.times_s, normalized.mu_star, normalized.var_star, policy);
    for (std::size_t i = 0; i < curve.size(); ++i) {
        const auto k = static_cast<Eigen::Index>(i);
        const bool ret = decision.returned && i >= decision.index;
        json line{{"t_s", curve.times_s[i]},
                  {"mu", raw.mu_star(k)},
                  {"var", raw.var_star(k)},
                  {"decision", ret ? "return" : "wait"},
                  {"t_returned_s", ret ? json(decision.t_s) : json(nullptr)}};
        std::cout << line.dump() << '\n';
    }
    json final{{"final", true}, {"status", decision.returned ? "returned" : "invalid"}};
    if (decision.returned) {
        final["t_returned_s"] = decision.t_s;
        final["value"] = datahub::denormalize_value(decision.value, model.normalizer);
        final["var"] = raw.var_star(static_cast<Eigen::Index>(decision.index));
    } else {
        final["t_returned_s"] = nullptr;
        final["cutoff_s"] = decision.t_s;
    }
    std::cout << final.dump() << '\n';
    return 0;
}

// evaluate

std::vector<const ResponseCurve*> select_split(const datahub::Corpus& c, const std::string& split) {
    std::vector<const ResponseCurve*> out;
    if (split == "all" || c.splits.empty()) {
        for (const auto& x : c.curves) out.push_back(&x);
        return out;
    }
    return c.in_split(datahub::split_from_string(split));
}

int cmd_evaluate(const fs::path& model_dir, const fs::path& curves_dir, const std::string& split,
                 const std::optional<fs::path>& policy_file, std::size_t bins, std::size_t traces, const fs::path& out,
                 const Verbosity& v) {
    require_dir(model_dir, "--model");
    require_dir(curves_dir, "--curves");
    if (policy_file) require_file(*policy_file, "--policy");
    const auto model = ensemble::load_ensemble(model_dir);
    const auto policy = resolve_policy(policy_file, model);
    auto corpus = datahub::load_corpus(curves_dir);
    if (corpus.splits.empty() && fs::exists(model_dir / "split.json")) {
        const auto stored = read_json(model_dir / "split.json");
        for (const auto& [id, s] : stored.items()) corpus.splits[id] = datahub::split_from_string(s.get<std::string>());
    }
    const auto curves = select_split(corpus, split);
    require(!curves.empty(), ErrorKind::EmptyCorpus, "no curves in split '" + split + "'");

    const auto report = metrics::evaluate_dataset(model, curves, policy, bins);
    plots::emit_report(report, out);
    plots::write_curves_overlay(curves, out / "curves_overlay.csv");
    plots::write_isotherm(curves, out / "isotherm.csv");
    std::vector<plots::Trace> tr;
    for (std::size_t i = 0; i < std::min(traces, curves.size()); ++i)
        tr.push_back({curves[i], ensemble::predict_stream(model, *curves[i])});
    plots::write_forecast_traces(tr, model.normalizer, out / "forecast_traces.csv");

    const auto& s = report.summary;
    std::ostringstream msg;
    msg << "evaluate: " << s.defined << "/" << s.total << " defined";
    if (s.mean_foi) msg << ", mean FOI " << *s.mean_foi << ", median FOI " << *s.median_foi;
    v.log(msg.str());
    return 0;
}

// sweep

int cmd_sweep(const fs::path& curves_dir, std::vector<std::size_t> sizes, std::uint64_t seed, const TrainOptions& o,
              const std::string& eval_split, const std::optional<fs::path>& policy_file, const fs::path& out,
              const Verbosity& v) {
    require_dir(curves_dir, "--curves");
    if (policy_file) require_file(*policy_file, "--policy");
    require(!sizes.empty(), ErrorKind::InvalidArgument, "--sizes is empty");
    auto p = prepare(curves_dir, o.split_seed.value_or(seed), v);
    require(!p.train.empty() && !p.validation.empty(), ErrorKind::EmptyCorpus, "sweep needs train and validation curves");
    const auto [net, cfg] = resolve_configs(o, static_cast<int>(p.train.front()->size()));
    const auto m = *std::max_element(sizes.begin(), sizes.end());
    const auto val = ensemble::to_sequence_set(p.validation, p.stats);
    auto pool = ensemble::train_ensemble(ensemble::to_sequence_set(p.train, p.stats), val, net, cfg, m, seed, p.stats,
                                         o.jobs, progress_logger(v));
    require(pool.diverged.empty(), ErrorKind::EnsembleDiverged, "sweep: members diverged, nested prefixes undefined");
    const auto policy = policy_file
                            ? metrics::stopping_policy_from_json(read_json(*policy_file))
                            : metrics::derive_default_policy(ensemble::predict_set(pool, val), duration_of(p.validation));
    const auto& target = eval_split == "test" ? p.test : p.validation;
    require(!target.empty(), ErrorKind::EmptyCorpus, "no curves in split '" + eval_split + "'");
    const auto rows = metrics::sweep_pool(pool, target, sizes, policy);
    plots::write_sweep(rows, out / "sweep.csv");
    json j = json::array();
    for (const auto& r : rows)
        j.push_back({{"ensemble_size", r.m}, {"mean_foi", metrics::opt(r.mean_foi)}, {"median_foi", metrics::opt(r.median_foi)},
                     {"defined", r.defined}, {"total", r.total}});
    write_json({{"seed", seed}, {"split", eval_split}, {"rows", j}}, out / "sweep.json");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"equilcast: sensor equilibrium forecasting toolkit"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_help_all_flag("--help-all");
    Verbosity verb;
    app.add_flag("-q,--quiet", verb.quiet, "suppress progress on stderr");

    std::function<int()> run;

    auto* rifts = app.add_subcommand("rifts", "spectra to response curves via RIFTS");
    fs::path r_spectra, r_dark, r_ref, r_out;
    std::string r_window = "500:1000";
    double r_conc = 0.0;
    rifts->add_option("--spectra", r_spectra, "directory of <t_seconds>.csv spectra, or of per-sensor subdirectories")->required();
    rifts->add_option("--dark", r_dark)->required();
    rifts->add_option("--reference", r_ref)->required();
    rifts->add_option("--window", r_window, "analysis window LO:HI in nm")->capture_default_str();
    rifts->add_option("--concentration", r_conc, "concentration when no sensor.json is present");
    rifts->add_option("--out", r_out)->required();
    rifts->callback([&] { run = [&] { return cmd_rifts(r_spectra, r_dark, r_ref, r_window, r_conc, r_out, verb); }; });

    auto* sim = app.add_subcommand("simulate", "generate a simulated corpus");
    std::optional<fs::path> s_dist;
    std::size_t s_n = 260;
    int s_steps = 250;
    double s_hours = 13.0;
    std::string s_snr = "2:100";
    std::uint64_t s_seed = 0;
    fs::path s_out;
    sim->add_option("--dist", s_dist, "parameter distribution JSON (default: built-in reference)");
    sim->add_option("--n", s_n)->capture_default_str();
    sim->add_option("--steps", s_steps)->capture_default_str();
    sim->add_option("--duration-h", s_hours)->capture_default_str();
    sim->add_option("--snr", s_snr, "log-uniform S/N range LO:HI")->capture_default_str();
    sim->add_option("--seed", s_seed)->required();
    sim->add_option("--out", s_out)->required();
    sim->callback([&] { run = [&] { return cmd_simulate(s_dist, s_n, s_steps, s_hours, s_snr, s_seed, s_out, verb); }; });

    auto* fp = app.add_subcommand("fit-params", "fit transport parameters per curve and a Gaussian over them");
    fs::path fp_curves, fp_out;
    int fp_restarts = 5, fp_iters = 150;
    std::uint64_t fp_seed = 0;
    unsigned fp_jobs = 1;
    fp->add_option("--curves", fp_curves)->required();
    fp->add_option("--out", fp_out)->required();
    fp->add_option("--restarts", fp_restarts)->capture_default_str();
    fp->add_option("--iterations", fp_iters)->capture_default_str();
    fp->add_option("--seed", fp_seed)->capture_default_str();
    fp->add_option("--jobs", fp_jobs)->check(CLI::PositiveNumber);
    fp->callback([&] { run = [&] { return cmd_fit_params(fp_curves, fp_out, fp_restarts, fp_iters, fp_seed, fp_jobs, verb); }; });

    auto* fi = app.add_subcommand("fit-isotherm", "fit a Redlich-Peterson isotherm to final responses");
    fs::path fi_curves, fi_out;
    fi->add_option("--curves", fi_curves)->required();
    fi->add_option("--out", fi_out)->required();
    fi->callback([&] { run = [&] { return cmd_fit_isotherm(fi_curves, fi_out, verb); }; });

    auto* tr = app.add_subcommand("train", "train an ensemble");
    fs::path t_curves, t_out;
    std::size_t t_m = 15;
    std::uint64_t t_seed = 0;
    TrainOptions t_opts;
    tr->add_option("--curves", t_curves)->required();
    tr->add_option("--ensemble-size", t_m)->capture_default_str()->check(CLI::PositiveNumber);
    tr->add_option("--seed", t_seed)->required();
    tr->add_option("--out", t_out)->required();
    add_train_options(tr, t_opts);
    tr->callback([&] { run = [&] { return cmd_train(t_curves, t_m, t_seed, t_opts, t_out, verb); }; });

    auto* pr = app.add_subcommand("predict", "stream forecasts and the stopping decision for one curve");
    fs::path p_model, p_curve;
    std::optional<fs::path> p_policy;
    pr->add_option("--model", p_model)->required();
    pr->add_option("--curve", p_curve)->required();
    pr->add_option("--policy", p_policy, "stopping policy JSON (default: the model's)");
    pr->callback([&] { run = [&] { return cmd_predict(p_model, p_curve, p_policy); }; });

    auto* ev = app.add_subcommand("evaluate", "evaluate an ensemble on a corpus");
    fs::path e_model, e_curves, e_out;
    std::string e_split = "test";
    std::optional<fs::path> e_policy;
    std::size_t e_bins = 20, e_traces = 5;
    ev->add_option("--model", e_model)->required();
    ev->add_option("--curves", e_curves)->required();
    ev->add_option("--split", e_split, "train|validation|test|all")->capture_default_str();
    ev->add_option("--policy", e_policy);
    ev->add_option("--bins", e_bins)->capture_default_str()->check(CLI::PositiveNumber);
    ev->add_option("--traces", e_traces, "curves written to forecast_traces.csv")->capture_default_str();
    ev->add_option("--out", e_out)->required();
    ev->callback([&] { run = [&] { return cmd_evaluate(e_model, e_curves, e_split, e_policy, e_bins, e_traces, e_out, verb); }; });

    auto* sw = app.add_subcommand("sweep", "ensemble-size sweep over nested member prefixes");
    fs::path w_curves, w_out;
    std::vector<std::size_t> w_sizes{1, 2, 5, 10, 15, 25};
    std::uint64_t w_seed = 0;
    std::string w_split = "validation";
    std::optional<fs::path> w_policy;
    TrainOptions w_opts;
    sw->add_option("--curves", w_curves)->required();
    sw->add_option("--sizes", w_sizes)->delimiter(',')->capture_default_str();
    sw->add_option("--seed", w_seed)->required();
    sw->add_option("--eval-split", w_split, "validation|test")->check(CLI::IsMember({"validation", "test"}))->capture_default_str();
    sw->add_option("--policy", w_policy);
    sw->add_option("--out", w_out)->required();
    add_train_options(sw, w_opts);
    sw->callback([&] { run = [&] { return cmd_sweep(w_curves, w_sizes, w_seed, w_opts, w_split, w_policy, w_out, verb); }; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "usage error: " << e.what() << "\n\n";
        const CLI::App* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
        std::cerr << sub->help();
        return 2;
    }
    try {
        return run();
    } catch (const Error& e) {
        std::cerr << e.what() << '\n';
    } catch (const std::exception& e) {
        std::string msg = e.what();
        std::replace(msg.begin(), msg.end(), '\n', ' ');
        std::cerr << "IoError: " << msg << '\n';
    }
    return 1;
}
