#pragma once
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pgbm.hpp"

// Batch command-line frontend: train, predict, evaluate, sweep.
//
// Exit codes: 0 ok, 2 usage or configuration error, 3 data or model error.
// Every subcommand accepts --config <file> with `key = value` lines (keys are
// the long flag names with '_' for '-', '#' starts a comment). Flags given on
// the command line override file values.

namespace pgbm::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;
inline constexpr std::size_t kMaxSampleColumns = 10000;

namespace detail {

struct TrainArgs {
    std::string data, target, model_out, valid, loss = "mse", hierarchy, rho = "auto", stop_metric = "rmse";
    int n_estimators = 100, max_bin = 64, max_leaves = 16, min_data_in_leaf = 1, threads = 1;
    int early_stopping_rounds = 0;
    double learning_rate = 0.1, lambda = 1.0, min_split_gain = 0.0, feature_fraction = 1.0, bagging_fraction = 1.0;
    std::uint64_t seed = 1;
};

struct PredictArgs {
    std::string model, data, out, dist = "normal", rho;
    std::size_t n_samples = 1000;
    std::uint64_t seed = 1;
    bool point_only = false, clamp_nonneg = false;
    int threads = 1;
};

struct EvaluateArgs {
    std::string pred, actual, target, metrics = "crps,rmse", hierarchy, out;
    bool per_group = false;
};

struct SweepArgs {
    std::string model, data, target, dists = "normal", rhos = "0:0.09:0.01", out;
    std::size_t n_samples = 1000;
    std::uint64_t seed = 1;
    bool clamp_nonneg = false;
    int threads = 1;
};

class UsageError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline std::string key_to_flag(std::string key) {
    std::replace(key.begin(), key.end(), '_', '-');
    return "--" + key;
}

// `key = value` lines; '#' starts a comment.
inline std::vector<std::pair<std::string, std::string>> read_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config file " + path);
    std::vector<std::pair<std::string, std::string>> out;
    std::string raw;
    std::size_t lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        if (auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
        auto line = trim(raw);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string_view::npos)
            throw UsageError(path + ":" + std::to_string(lineno) + ": expected key = value");
        out.emplace_back(std::string(trim(line.substr(0, eq))), std::string(trim(line.substr(eq + 1))));
    }
    return out;
}

inline std::vector<double> parse_real_list(const std::string& s, const char* what) {
    std::vector<double> out;
    for (auto tok : split(s, ',')) {
        auto v = parse_double(tok);
        if (!v) throw UsageError(std::string("bad ") + what + " '" + std::string(tok) + "'");
        out.push_back(*v);
    }
    return out;
}

/// "a,b,c" or an inclusive range "start:stop:step". Range values are rounded
/// to 12 significant digits so 0:0.09:0.01 yields the same doubles as typing
/// 0.07 by hand.
inline std::vector<double> parse_rho_grid(const std::string& s) {
    if (s.find(':') == std::string::npos) return parse_real_list(s, "rho");
    auto parts = split(s, ':');
    if (parts.size() != 3) throw UsageError("rho range must be start:stop:step");
    auto a = parse_double(parts[0]), b = parse_double(parts[1]), st = parse_double(parts[2]);
    if (!a || !b || !st || !(*st > 0.0) || *b < *a) throw UsageError("bad rho range '" + s + "'");
    std::vector<double> out;
    const auto n = static_cast<long>(std::floor((*b - *a) / *st + 1e-9));
    for (long i = 0; i <= n; ++i) {
        std::ostringstream ss;
        ss.precision(12);
        ss << (*a + static_cast<double>(i) * *st);
        out.push_back(*parse_double(ss.str()));
    }
    return out;
}

inline double resolve_rho(const std::string& s, const Ensemble& m) {
    if (s.empty()) return m.rho;
    if (s == "auto") return default_rho(m.n_train);
    auto v = parse_double(s);
    if (!v || !(*v >= -1.0 && *v <= 1.0)) throw UsageError("rho must be 'auto' or a number in [-1, 1]");
    return *v;
}

inline void write_csv_line(std::ostream& out, const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
    out << '\n';
}

// Prediction CSV as produced by `predict`: row,mu,var[,s0..].
struct PredictionTable {
    std::vector<double> mu, var;
    SampleMatrix samples;
};

inline PredictionTable read_prediction_csv(const std::string& path) {
    auto table = pgbm::detail::read_numeric_csv(path);
    const auto& h = table.header;
    if (h.size() < 3 || h[0] != "row" || h[1] != "mu" || h[2] != "var")
        throw Error(Errc::parse_error, path + ": expected header row,mu,var[,s0,...]");
    PredictionTable t;
    const std::size_t n = table.rows.size();
    const std::size_t m = h.size() - 3;
    t.samples.n_rows = n;
    t.samples.n_draws = m;
    t.samples.samples.reserve(n * m);
    for (auto& row : table.rows) {
        t.mu.push_back(row[1]);
        t.var.push_back(row[2]);
        t.samples.samples.insert(t.samples.samples.end(), row.begin() + 3, row.end());
    }
    return t;
}

inline void write_predictions(std::ostream& out, const PredictiveMoments& pm, const SampleMatrix* s) {
    out << "row,mu,var";
    if (s)
        for (std::size_t d = 0; d < s->n_draws; ++d) out << ",s" << d;
    out << '\n';
    std::string line;
    for (std::size_t r = 0; r < pm.size(); ++r) {
        line.clear();
        line += std::to_string(r);
        line += ',';
        line += format_double(pm.mu[r]);
        line += ',';
        line += format_double(pm.var[r]);
        if (s)
            for (double x : s->row(r)) {
                line += ',';
                line += format_double(x);
            }
        line += '\n';
        out << line;
    }
}

inline std::ofstream open_out(const std::string& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error(Errc::io_error, "cannot write " + path);
    return f;
}

// ---------------------------------------------------------------------------

inline int cmd_train(const TrainArgs& a, std::ostream& out) {
    BoostConfig cfg;
    cfg.n_estimators = a.n_estimators;
    cfg.learning_rate = a.learning_rate;
    cfg.bagging_fraction = a.bagging_fraction;
    cfg.tree.feature_fraction = a.feature_fraction;
    cfg.tree.max_bins = a.max_bin;
    cfg.tree.max_leaves = a.max_leaves;
    cfg.tree.lambda = a.lambda;
    cfg.tree.min_split_gain = a.min_split_gain;
    cfg.tree.min_data_in_leaf = a.min_data_in_leaf;
    cfg.seed = a.seed;
    cfg.tree.seed = a.seed;
    cfg.n_threads = a.threads;
    if (a.rho != "auto") {
        auto v = parse_double(a.rho);
        if (!v) throw UsageError("rho must be 'auto' or a number in [-1, 1]");
        cfg.rho = *v;
    }
    if (a.early_stopping_rounds > 0) {
        if (a.valid.empty()) throw UsageError("--early-stopping-rounds needs --valid");
        cfg.early_stopping_rounds = a.early_stopping_rounds;
    }
    cfg.validate();

    auto data = load_csv(a.data, a.target);
    Loss loss = mse_loss();
    if (a.loss == "hierwmse") {
        if (a.hierarchy.empty()) throw UsageError("--loss hierwmse needs --hierarchy");
        auto spec = load_hierarchy(a.hierarchy);
        spec.validate(data.n_samples);
        loss = hier_wmse(std::move(spec));
    } else if (a.loss != "mse") {
        throw UsageError("unknown loss '" + a.loss + "'");
    }

    std::optional<RawDataset> valid;
    std::optional<Validation> vspec;
    if (!a.valid.empty()) {
        valid = load_csv(a.valid, a.target);
        vspec = Validation{&*valid, a.stop_metric == "crps" ? StopMetric::crps : StopMetric::rmse};
    }
    const std::string metric_label = a.stop_metric;
    TrainLog log;
    auto model = train(data, loss, cfg, vspec, &log, [&](std::size_t k, double m) {
        if (vspec) out << "iter " << k << ' ' << metric_label << '=' << format_double(m) << '\n';
    });
    save(model, a.model_out);
    out << "trained " << model.trees.size() << " trees" << (log.stopped_early ? " (early stopped)" : "")
        << ", rho=" << format_double(model.rho) << ", model saved to " << a.model_out << '\n';
    return kExitOk;
}

inline int cmd_predict(const PredictArgs& a, std::ostream& out) {
    if (!a.point_only && a.n_samples > kMaxSampleColumns)
        throw UsageError("--n-samples is capped at " + std::to_string(kMaxSampleColumns) +
                         " columns; use sweep or several seeds for larger draws");
    if (!a.point_only && a.n_samples < 1) throw UsageError("--n-samples must be >= 1");
    const auto family = parse_family(a.dist);
    auto model = load(a.model);
    const double rho = resolve_rho(a.rho, model);
    auto data = load_csv_for_model(a.data, model.feature_names, model.target_name);
    auto pm = predict_moments(model, data, rho, a.threads);
    auto f = open_out(a.out);
    if (a.point_only) {
        write_predictions(f, pm, nullptr);
    } else {
        auto s = sample(pm, DistSpec{family, a.clamp_nonneg}, a.n_samples, a.seed, a.threads);
        write_predictions(f, pm, &s);
        if (s.fallback_rows)
            std::cerr << "warning: " << s.fallback_rows << " rows infeasible for " << a.dist
                      << ", sampled as normal\n";
    }
    if (!f) throw Error(Errc::io_error, "write failed for " + a.out);
    out << "wrote " << pm.size() << " rows to " << a.out << '\n';
    return kExitOk;
}

inline int cmd_evaluate(const EvaluateArgs& a, std::ostream& out) {
    std::vector<Metric> metrics;
    for (auto tok : split(a.metrics, ',')) metrics.push_back(parse_metric(trim(tok)));

    auto pred = read_prediction_csv(a.pred);
    std::vector<double> y;
    if (!a.target.empty()) {
        y = load_csv_column(a.actual, a.target);
    } else {
        auto table = pgbm::detail::read_numeric_csv(a.actual);
        if (table.header.size() != 1) throw UsageError("--actual has several columns; name one with --target");
        for (auto& r : table.rows) y.push_back(r[0]);
    }
    if (y.size() != pred.mu.size())
        throw Error(Errc::length_mismatch, "predictions have " + std::to_string(pred.mu.size()) + " rows, actuals " +
                                               std::to_string(y.size()));

    std::optional<HierarchySpec> spec;
    if (!a.hierarchy.empty()) {
        spec = load_hierarchy(a.hierarchy);
        spec->validate(y.size());
    }

    std::vector<MetricReport> reports;
    for (auto m : metrics) {
        if (m == Metric::crps && pred.samples.n_draws == 0)
            throw Error(Errc::empty_samples, a.pred + " has no sample columns; re-run predict without --point-only");
        if (spec) {
            auto r = m == Metric::crps ? hierarchical_crps(y, pred.samples, *spec) : hierarchical_rmse(y, pred.mu, *spec);
            reports.insert(reports.end(), r.begin(), r.end());
        } else {
            MetricReport r;
            r.name = std::string(metric_name(m));
            r.value = m == Metric::crps ? crps_mean(pred.samples, y) : rmse(y, pred.mu);
            r.n = y.size();
            reports.push_back(std::move(r));
        }
    }
    write_report_csv(out, reports, a.per_group);
    if (!a.out.empty()) {
        auto f = open_out(a.out);
        write_report_csv(f, reports, a.per_group);
    }
    return kExitOk;
}

inline int cmd_sweep(const SweepArgs& a, std::ostream& out) {
    std::vector<Family> families;
    for (auto tok : split(a.dists, ',')) families.push_back(parse_family(trim(tok)));
    const auto rhos = parse_rho_grid(a.rhos);
    for (double r : rhos)
        if (!(r >= -1.0 && r <= 1.0)) throw UsageError("rho values must lie in [-1, 1]");
    if (a.n_samples < 1) throw UsageError("--n-samples must be >= 1");

    auto model = load(a.model);
    const std::string target = a.target.empty() ? model.target_name : a.target;
    auto data = load_csv_for_model(a.data, model.feature_names, target);
    if (!data.has_target()) throw Error(Errc::missing_column, "sweep data needs target column '" + target + "'");

    const auto routed = route_batch(model, data, a.threads);
    std::ostringstream grid;
    grid << "dist,rho,crps\n";
    double best = std::numeric_limits<double>::infinity();
    std::string best_dist;
    double best_rho = 0.0;
    for (double rho : rhos) {
        const auto pm = routed.moments(rho, a.threads);
        for (auto fam : families) {
            const auto s = sample(pm, DistSpec{fam, a.clamp_nonneg}, a.n_samples, a.seed, a.threads);
            const double c = crps_mean(s, data.target);
            grid << family_name(fam) << ',' << format_double(rho) << ',' << format_double(c) << '\n';
            if (c < best) {
                best = c;
                best_dist = std::string(family_name(fam));
                best_rho = rho;
            }
        }
    }
    if (!a.out.empty()) {
        auto f = open_out(a.out);
        f << grid.str();
    } else {
        out << grid.str();
    }
    out << "best dist=" << best_dist << " rho=" << format_double(best_rho) << " crps=" << format_double(best) << '\n';
    return kExitOk;
}

} // namespace detail

/// Entry point shared by the executable and the tests.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    using namespace detail;
    CLI::App app{"Probabilistic gradient boosting: train, predict, evaluate, sweep"};
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    app.require_subcommand(1);
    std::string config_path;

    TrainArgs ta;
    auto* train_cmd = app.add_subcommand("train", "Fit an ensemble and save it");
    train_cmd->add_option("--config", config_path, "key = value config file");
    train_cmd->add_option("--data", ta.data, "training CSV")->required();
    train_cmd->add_option("--target", ta.target, "target column")->required();
    train_cmd->add_option("--model-out", ta.model_out, "model file to write")->required();
    train_cmd->add_option("--valid", ta.valid, "validation CSV");
    train_cmd->add_option("--loss", ta.loss, "mse or hierwmse")->check(CLI::IsMember({"mse", "hierwmse"}));
    train_cmd->add_option("--hierarchy", ta.hierarchy, "hierarchy file for hierwmse");
    train_cmd->add_option("--n-estimators", ta.n_estimators);
    train_cmd->add_option("--learning-rate", ta.learning_rate);
    train_cmd->add_option("--bagging-fraction", ta.bagging_fraction);
    train_cmd->add_option("--feature-fraction", ta.feature_fraction);
    train_cmd->add_option("--max-bin", ta.max_bin);
    train_cmd->add_option("--max-leaves", ta.max_leaves);
    train_cmd->add_option("--lambda", ta.lambda);
    train_cmd->add_option("--min-split-gain", ta.min_split_gain);
    train_cmd->add_option("--min-data-in-leaf", ta.min_data_in_leaf);
    train_cmd->add_option("--seed", ta.seed);
    train_cmd->add_option("--rho", ta.rho, "tree correlation, number or auto");
    train_cmd->add_option("--early-stopping-rounds", ta.early_stopping_rounds);
    train_cmd->add_option("--stop-metric", ta.stop_metric, "rmse or crps")->check(CLI::IsMember({"rmse", "crps"}));
    train_cmd->add_option("--threads", ta.threads);

    PredictArgs pa;
    auto* predict_cmd = app.add_subcommand("predict", "Predict moments and draw samples");
    predict_cmd->add_option("--config", config_path, "key = value config file");
    predict_cmd->add_option("--model", pa.model)->required();
    predict_cmd->add_option("--data", pa.data)->required();
    predict_cmd->add_option("--out", pa.out)->required();
    predict_cmd->add_option("--dist", pa.dist, "output distribution family");
    predict_cmd->add_option("--rho", pa.rho, "override stored rho (number or auto)");
    predict_cmd->add_option("--n-samples", pa.n_samples);
    predict_cmd->add_option("--seed", pa.seed);
    predict_cmd->add_flag("--point-only", pa.point_only, "write row,mu,var only");
    predict_cmd->add_flag("--clamp-nonneg", pa.clamp_nonneg, "truncate samples at 0");
    predict_cmd->add_option("--threads", pa.threads);

    EvaluateArgs ea;
    auto* eval_cmd = app.add_subcommand("evaluate", "Score predictions against actuals");
    eval_cmd->add_option("--config", config_path, "key = value config file");
    eval_cmd->add_option("--pred", ea.pred)->required();
    eval_cmd->add_option("--actual", ea.actual)->required();
    eval_cmd->add_option("--target", ea.target, "column of --actual holding the target");
    eval_cmd->add_option("--metrics", ea.metrics, "comma list of crps,rmse");
    eval_cmd->add_option("--hierarchy", ea.hierarchy);
    eval_cmd->add_option("--out", ea.out, "report CSV");
    eval_cmd->add_flag("--per-group", ea.per_group, "add one row per group");

    SweepArgs sa;
    auto* sweep_cmd = app.add_subcommand("sweep", "CRPS grid over distributions and rho");
    sweep_cmd->add_option("--config", config_path, "key = value config file");
    sweep_cmd->add_option("--model", sa.model)->required();
    sweep_cmd->add_option("--data", sa.data)->required();
    sweep_cmd->add_option("--target", sa.target, "defaults to the model's target column");
    sweep_cmd->add_option("--dists", sa.dists, "comma list of families");
    sweep_cmd->add_option("--rhos", sa.rhos, "comma list or start:stop:step");
    sweep_cmd->add_option("--n-samples", sa.n_samples);
    sweep_cmd->add_option("--seed", sa.seed);
    sweep_cmd->add_option("--out", sa.out, "grid CSV (stdout when omitted)");
    sweep_cmd->add_flag("--clamp-nonneg", sa.clamp_nonneg);
    sweep_cmd->add_option("--threads", sa.threads);

    std::vector<std::string> args(argv + 1, argv + argc);
    try {
        // Splice config-file values in ahead of the user's flags so the
        // latter win under TakeLast.
        std::optional<std::string> cfg_file;
        for (std::size_t i = 0; i < args.size(); ++i) {
            if (args[i] == "--config" && i + 1 < args.size()) cfg_file = args[i + 1];
            else if (args[i].starts_with("--config=")) cfg_file = args[i].substr(9);
        }
        if (cfg_file && !args.empty()) {
            CLI::App* sub = nullptr;
            for (auto* s : {train_cmd, predict_cmd, eval_cmd, sweep_cmd})
                if (s->get_name() == args[0]) sub = s;
            if (sub) {
                std::set<std::string> known;
                for (auto* s : {train_cmd, predict_cmd, eval_cmd, sweep_cmd})
                    for (auto* o : s->get_options())
                        for (auto& ln : o->get_lnames()) known.insert(ln);
                std::vector<std::string> injected;
                for (auto& [key, value] : read_config_file(*cfg_file)) {
                    std::string lname = key;
                    std::replace(lname.begin(), lname.end(), '_', '-');
                    if (!known.count(lname) || lname == "config") throw UsageError("unknown config key '" + key + "'");
                    const CLI::Option* opt = nullptr;
                    for (auto* o : sub->get_options())
                        for (auto& ln : o->get_lnames())
                            if (ln == lname) opt = o;
                    if (!opt) continue;  // belongs to another subcommand
                    if (opt->get_type_size() == 0) {
                        if (value == "true" || value == "1") injected.push_back(key_to_flag(key));
                        else if (value != "false" && value != "0")
                            throw UsageError("config key '" + key + "' expects true or false");
                    } else {
                        injected.push_back(key_to_flag(key));
                        injected.push_back(value);
                    }
                }
                args.insert(args.begin() + 1, injected.begin(), injected.end());
            }
        }
        std::reverse(args.begin(), args.end());  // CLI11 consumes a reversed vector
        app.parse(args);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    }

    try {
        if (train_cmd->parsed()) return cmd_train(ta, out);
        if (predict_cmd->parsed()) return cmd_predict(pa, out);
        if (eval_cmd->parsed()) return cmd_evaluate(ea, out);
        if (sweep_cmd->parsed()) return cmd_sweep(sa, out);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return e.is_data_error() ? kExitData : kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitData;
    }
    return kExitUsage;
}

} // namespace pgbm::cli
