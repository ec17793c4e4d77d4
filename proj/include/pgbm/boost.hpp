#pragma once
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "data.hpp"
#include "error.hpp"
#include "loss.hpp"
#include "tree.hpp"
#include "util.hpp"

namespace pgbm {

enum class StopMetric { rmse, crps };

struct BoostConfig {
    int n_estimators = 100;
    double learning_rate = 0.1;
    double bagging_fraction = 1.0;
    TreeConfig tree;
    std::optional<double> rho;  // nullopt resolves to default_rho(n_train)
    std::optional<int> early_stopping_rounds;
    std::uint64_t seed = 1;
    int n_threads = 1;  // runtime only; never changes results

    void validate() const {
        auto bad = [](const std::string& m) { throw Error(Errc::invalid_config, m); };
        if (n_estimators < 1) bad("n_estimators must be >= 1");
        if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) bad("learning_rate must be > 0");
        if (!(bagging_fraction > 0.0 && bagging_fraction <= 1.0)) bad("bagging_fraction must be in (0, 1]");
        if (rho && !(*rho >= -1.0 && *rho <= 1.0)) bad("rho must be in [-1, 1]");
        if (early_stopping_rounds && *early_stopping_rounds < 1) bad("early_stopping_rounds must be >= 1");
        tree.validate();
    }
};

/// Trained model: trees in boosting order plus everything prediction needs.
struct Ensemble {
    std::vector<Tree> trees;
    double y0 = 0.0;
    double alpha = 0.1;
    double rho = 0.0;
    BinEdges edges;
    BoostConfig config;
    std::size_t n_train = 0;
    std::vector<std::string> feature_names;
    std::string target_name;
    std::string objective = "mse";

    std::size_t n_features() const { return edges.n_features(); }

    bool operator==(const Ensemble& o) const {
        return trees == o.trees && y0 == o.y0 && alpha == o.alpha && rho == o.rho && edges == o.edges &&
               n_train == o.n_train && feature_names == o.feature_names && target_name == o.target_name &&
               objective == o.objective;
    }
};

struct PredictiveMoments {
    std::vector<double> mu;
    std::vector<double> var;

    std::size_t size() const { return mu.size(); }
};

/// log10(n) / 100
inline double default_rho(std::size_t n_train) {
    return std::log10(static_cast<double>(std::max<std::size_t>(n_train, 1))) / 100.0;
}

/// Adds one tree's stochastic leaf weight to a running (mean, variance):
///   mu  <- mu - alpha * leaf.mu
///   var <- var + alpha^2 leaf.var - 2 alpha rho sqrt(var) sqrt(leaf.var), clamped at 0
inline std::pair<double, double> update_moments(double mu_prev, double var_prev, double alpha, double rho,
                                                const LeafStats& leaf) {
    const double mu = mu_prev - alpha * leaf.mu;
    const double var =
        var_prev + alpha * alpha * leaf.var - 2.0 * alpha * rho * std::sqrt(var_prev) * std::sqrt(leaf.var);
    return {mu, std::max(0.0, var)};
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct Validation {
    const RawDataset* data = nullptr;
    StopMetric metric = StopMetric::rmse;
};

struct TrainLog {
    std::vector<double> valid_metric;  // after each iteration, when validating
    std::size_t best_iteration = 0;    // number of trees kept
    bool stopped_early = false;
    std::vector<double> train_estimate;  // final training-set means
};

using IterationCallback = std::function<void(std::size_t iteration, double valid_metric)>;

namespace detail {

inline double mean(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

inline double rmse_of(std::span<const double> y, std::span<const double> mu) {
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - mu[i]) * (y[i] - mu[i]);
    return std::sqrt(s / static_cast<double>(y.size()));
}

// Closed-form CRPS of N(mu, var) at y, averaged over rows.
inline double normal_crps_of(std::span<const double> y, std::span<const double> mu, std::span<const double> var) {
    constexpr double inv_sqrt_pi = 0.56418958354775628695;
    constexpr double inv_sqrt_2pi = 0.39894228040143267794;
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double sd = std::sqrt(var[i]);
        if (sd == 0.0) {
            s += std::abs(y[i] - mu[i]);
            continue;
        }
        const double z = (y[i] - mu[i]) / sd;
        const double cdf = 0.5 * std::erfc(-z / std::sqrt(2.0));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * z * z);
        s += sd * (z * (2.0 * cdf - 1.0) + 2.0 * pdf - inv_sqrt_pi);
    }
    return s / static_cast<double>(y.size());
}

inline void check_gradhess(const GradHess& gh, std::size_t n) {
    if (gh.g.size() != n || gh.h.size() != n)
        throw Error(Errc::length_mismatch, "loss returned " + std::to_string(gh.g.size()) + " gradients for " +
                                               std::to_string(n) + " rows");
    for (std::size_t i = 0; i < n; ++i)
        if (!std::isfinite(gh.g[i]) || !std::isfinite(gh.h[i]))
            throw Error(Errc::non_finite_loss, "gradient or hessian not finite at row " + std::to_string(i));
}

// ceil(fraction * n) rows without replacement, sorted.
inline std::vector<std::size_t> bagging_subset(std::size_t n, double fraction, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (fraction >= 1.0) return idx;
    auto m = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n)));
    m = std::clamp<std::size_t>(m, 1, n);
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < m; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n - 1);
        std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(m);
    std::sort(idx.begin(), idx.end());
    return idx;
}

constexpr std::uint64_t kBaggingSalt = 0x62616767;  // "bagg"
constexpr std::uint64_t kFeatureSalt = 0x66656174;  // "feat"

} // namespace detail

/// Boosting loop: bin once, start every estimate at mean(y), then per
/// iteration compute (g, h) on all rows, grow a tree on a bagged subset and
/// shift every training estimate by -alpha * leaf.mu. With a validation set
/// the stop metric is scored after every tree; with early_stopping_rounds
/// the ensemble is truncated at the best iteration.
inline Ensemble train(const RawDataset& data, const Loss& loss, const BoostConfig& cfg,
                      std::optional<Validation> valid = std::nullopt, TrainLog* log = nullptr,
                      const IterationCallback& on_iteration = {}) {
    cfg.validate();
    if (!data.has_target() || data.target.size() != data.n_samples)
        throw Error(Errc::length_mismatch, "training data needs one target per row");
    if (data.n_samples == 0) throw Error(Errc::empty_dataset, "no training rows");
    if (cfg.early_stopping_rounds && !(valid && valid->data))
        throw Error(Errc::invalid_config, "early stopping needs a validation set");
    if (valid && valid->data) {
        if (valid->data->n_features != data.n_features)
            throw Error(Errc::feature_count_mismatch, "validation set has " +
                                                          std::to_string(valid->data->n_features) + " features, "
                                                          "training set " + std::to_string(data.n_features));
        if (!valid->data->has_target()) throw Error(Errc::length_mismatch, "validation set has no target");
    }

    const std::size_t n = data.n_samples;
    Ensemble model;
    model.edges = compute_bin_edges(data, cfg.tree.max_bins, cfg.n_threads);
    const auto binned = apply_bins(data, model.edges, cfg.n_threads);
    model.y0 = detail::mean(data.target);
    model.alpha = cfg.learning_rate;
    model.n_train = n;
    model.rho = cfg.rho.value_or(default_rho(n));
    model.config = cfg;
    model.feature_names = data.feature_names;
    model.target_name = data.target_name;
    model.objective = loss.name;
    if (!std::isfinite(model.y0)) throw Error(Errc::non_finite_estimate, "target mean is not finite");

    std::vector<double> mu(n, model.y0);

    std::optional<BinnedDataset> vbinned;
    std::vector<double> vmu, vvar;
    if (valid && valid->data) {
        vbinned = apply_bins(*valid->data, model.edges, cfg.n_threads);
        vmu.assign(valid->data->n_samples, model.y0);
        vvar.assign(valid->data->n_samples, 0.0);
    }

    double best_metric = std::numeric_limits<double>::infinity();
    std::size_t best_iter = 0;
    std::vector<double> metrics;

    for (int k = 0; k < cfg.n_estimators; ++k) {
        const auto iter = static_cast<std::uint64_t>(k);
        GradHess gh = loss.gradhess(data.target, mu);
        detail::check_gradhess(gh, n);

        const auto rows = detail::bagging_subset(n, cfg.bagging_fraction,
                                                 derive_seed(cfg.seed, iter, detail::kBaggingSalt));
        TreeConfig tcfg = cfg.tree;
        tcfg.seed = derive_seed(cfg.seed, iter, detail::kFeatureSalt);
        Tree tree = grow_tree(binned, gh, rows, tcfg, cfg.n_threads);

        bool finite = true;
        parallel_for(
            n, cfg.n_threads,
            [&](std::size_t b, std::size_t e) {
                for (std::size_t i = b; i < e; ++i) {
                    const auto& leaf = tree.leaves[route(tree, binned, i)];
                    mu[i] = mu[i] - model.alpha * leaf.mu;
                }
            },
            static_cast<std::size_t>(tcfg.max_leaves));
        for (double v : mu) finite = finite && std::isfinite(v);
        if (!finite)
            throw Error(Errc::non_finite_estimate,
                        "estimate diverged at iteration " + std::to_string(k + 1) + "; lower learning_rate");

        model.trees.push_back(std::move(tree));

        if (vbinned) {
            const auto& t = model.trees.back();
            for (std::size_t i = 0; i < vmu.size(); ++i) {
                std::tie(vmu[i], vvar[i]) =
                    update_moments(vmu[i], vvar[i], model.alpha, model.rho, t.leaves[route(t, *vbinned, i)]);
            }
            const double m = valid->metric == StopMetric::rmse
                                 ? detail::rmse_of(valid->data->target, vmu)
                                 : detail::normal_crps_of(valid->data->target, vmu, vvar);
            metrics.push_back(m);
            if (on_iteration) on_iteration(static_cast<std::size_t>(k + 1), m);
            if (m < best_metric) {
                best_metric = m;
                best_iter = static_cast<std::size_t>(k + 1);
            }
            if (cfg.early_stopping_rounds &&
                static_cast<std::size_t>(k + 1) - best_iter >= static_cast<std::size_t>(*cfg.early_stopping_rounds)) {
                if (log) log->stopped_early = true;
                break;
            }
        } else if (on_iteration) {
            on_iteration(static_cast<std::size_t>(k + 1), std::numeric_limits<double>::quiet_NaN());
        }
    }

    if (cfg.early_stopping_rounds && best_iter > 0 && best_iter < model.trees.size()) {
        // Training estimates must reflect only the kept trees.
        model.trees.resize(best_iter);
        mu.assign(n, model.y0);
        for (const auto& tree : model.trees)
            for (std::size_t i = 0; i < n; ++i) mu[i] = mu[i] - model.alpha * tree.leaves[route(tree, binned, i)].mu;
    }

    if (log) {
        log->valid_metric = std::move(metrics);
        log->best_iteration = model.trees.size();
        log->train_estimate = std::move(mu);
    }
    return model;
}

// ---------------------------------------------------------------------------
// Prediction
// ---------------------------------------------------------------------------

/// Runs every tree over `data` in order, accumulating mean and variance with
/// the model's rho (or `rho_override`).
inline PredictiveMoments predict_moments(const Ensemble& model, const RawDataset& data,
                                         std::optional<double> rho_override = std::nullopt, int n_threads = 1) {
    const auto binned = apply_bins(data, model.edges, n_threads);
    const double rho = rho_override.value_or(model.rho);
    PredictiveMoments out;
    out.mu.assign(data.n_samples, model.y0);
    out.var.assign(data.n_samples, 0.0);
    parallel_for(
        data.n_samples, n_threads,
        [&](std::size_t b, std::size_t e) {
            for (std::size_t i = b; i < e; ++i) {
                double m = model.y0, v = 0.0;
                for (const auto& tree : model.trees)
                    std::tie(m, v) = update_moments(m, v, model.alpha, rho, tree.leaves[route(tree, binned, i)]);
                out.mu[i] = m;
                out.var[i] = v;
            }
        },
        model.trees.size() + 1);
    return out;
}

/// Leaf assignments of a batch, computed once so moments can be
/// re-accumulated for many rho values without routing again.
struct RoutedBatch {
    const Ensemble* model = nullptr;
    std::size_t n_rows = 0;
    std::vector<std::uint32_t> leaf;  // [row * n_trees + tree]

    PredictiveMoments moments(double rho, int n_threads = 1) const {
        const std::size_t nt = model->trees.size();
        PredictiveMoments out;
        out.mu.assign(n_rows, model->y0);
        out.var.assign(n_rows, 0.0);
        parallel_for(
            n_rows, n_threads,
            [&](std::size_t b, std::size_t e) {
                for (std::size_t i = b; i < e; ++i) {
                    double m = model->y0, v = 0.0;
                    for (std::size_t t = 0; t < nt; ++t)
                        std::tie(m, v) =
                            update_moments(m, v, model->alpha, rho, model->trees[t].leaves[leaf[i * nt + t]]);
                    out.mu[i] = m;
                    out.var[i] = v;
                }
            },
            nt + 1);
        return out;
    }
};

inline RoutedBatch route_batch(const Ensemble& model, const RawDataset& data, int n_threads = 1) {
    const auto binned = apply_bins(data, model.edges, n_threads);
    RoutedBatch rb;
    rb.model = &model;
    rb.n_rows = data.n_samples;
    const std::size_t nt = model.trees.size();
    rb.leaf.resize(rb.n_rows * nt);
    parallel_for(
        rb.n_rows, n_threads,
        [&](std::size_t b, std::size_t e) {
            for (std::size_t i = b; i < e; ++i)
                for (std::size_t t = 0; t < nt; ++t)
                    rb.leaf[i * nt + t] = static_cast<std::uint32_t>(route(model.trees[t], binned, i));
        },
        nt + 1);
    return rb;
}

} // namespace pgbm
