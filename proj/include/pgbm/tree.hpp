#pragma once
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "data.hpp"
#include "error.hpp"
#include "loss.hpp"
#include "util.hpp"

namespace pgbm {

/// Guard on hessian denominators (sums + lambda for splits, means + lambda/n
/// for leaves).
inline constexpr double kHessianEps = 1e-9;

struct TreeConfig {
    int max_leaves = 16;
    int max_bins = 64;
    double lambda = 1.0;
    double min_split_gain = 0.0;
    int min_data_in_leaf = 1;
    double feature_fraction = 1.0;
    std::uint64_t seed = 1;

    void validate() const {
        auto bad = [](const std::string& m) { throw Error(Errc::invalid_config, m); };
        if (max_leaves < 1) bad("max_leaves must be >= 1");
        if (max_bins < 2 || max_bins > kMaxSupportedBins) bad("max_bin must be in [2, 65536]");
        if (!(lambda >= 0.0) || !std::isfinite(lambda)) bad("lambda must be >= 0");
        if (!(min_split_gain >= 0.0)) bad("min_split_gain must be >= 0");
        if (min_data_in_leaf < 1) bad("min_data_in_leaf must be >= 1");
        if (!(feature_fraction > 0.0 && feature_fraction <= 1.0)) bad("feature_fraction must be in (0, 1]");
    }
};

/// Internal node: rows with bin <= threshold on `feature` go left. Children
/// are node references (see Tree).
struct SplitNode {
    int feature = 0;
    int threshold = 0;
    int left = 0;
    int right = 0;
    double gain = 0.0;

    bool operator==(const SplitNode&) const = default;
};

/// Stochastic leaf weight: approximate mean and variance of g/(h + lambda/n)
/// over the leaf's instance set.
struct LeafStats {
    double mu = 0.0;
    double var = 0.0;
    std::size_t n = 0;

    bool operator==(const LeafStats&) const = default;
};

/// Binary tree over binned features. A node reference r >= 0 names
/// nodes[r]; r < 0 names leaves[~r]. The root is node 0, or leaf 0 when the
/// tree has no splits.
struct Tree {
    std::vector<SplitNode> nodes;
    std::vector<LeafStats> leaves;

    static constexpr int leaf_ref(std::size_t leaf) { return ~static_cast<int>(leaf); }
    static constexpr bool is_leaf(int ref) { return ref < 0; }
    static constexpr std::size_t leaf_index(int ref) { return static_cast<std::size_t>(~ref); }

    int root() const { return nodes.empty() ? leaf_ref(0) : 0; }

    bool operator==(const Tree&) const = default;
};

/// Leaf id reached by a row given as a bin accessor (feature -> bin).
template <class BinOf>
std::size_t route(const Tree& tree, BinOf&& bin_of) {
    int ref = tree.root();
    while (!Tree::is_leaf(ref)) {
        const auto& nd = tree.nodes[static_cast<std::size_t>(ref)];
        ref = static_cast<int>(bin_of(static_cast<std::size_t>(nd.feature))) <= nd.threshold ? nd.left : nd.right;
    }
    return Tree::leaf_index(ref);
}

inline std::size_t route(const Tree& tree, std::span<const BinIndex> row) {
    return route(tree, [row](std::size_t f) { return row[f]; });
}

inline std::size_t route(const Tree& tree, const BinnedDataset& data, std::size_t sample) {
    return route(tree, [&](std::size_t f) { return data.bins[f][sample]; });
}

// ---------------------------------------------------------------------------
// Split scoring
// ---------------------------------------------------------------------------

/// Objective reduction of splitting a node into (L, R), lambda applied to sums.
inline double split_gain(double sum_gl, double sum_hl, double sum_gr, double sum_hr, double lambda) {
    const double dl = sum_hl + lambda;
    const double dr = sum_hr + lambda;
    const double sum_g = sum_gl + sum_gr;
    const double dp = sum_hl + sum_hr + lambda;
    if (!(dl > 0.0) || !(dr > 0.0) || !(dp > 0.0))
        throw Error(Errc::non_positive_hessian_denominator, "hessian sum + lambda must be positive");
    return 0.5 * (sum_gl * sum_gl / dl + sum_gr * sum_gr / dr - sum_g * sum_g / dp);
}

struct NodeTotals {
    double sum_g = 0.0;
    double sum_h = 0.0;
    std::size_t count = 0;
};

inline NodeTotals node_totals(const GradHess& gh, std::span<const std::size_t> idx) {
    NodeTotals t;
    for (auto i : idx) {
        t.sum_g += gh.g[i];
        t.sum_h += gh.h[i];
    }
    t.count = idx.size();
    return t;
}

/// Per-(feature, bin) sums of g and h plus counts over one node's rows.
/// Only the features the tree may split on are filled.
struct Histogram {
    std::vector<std::size_t> offset;  // n_features + 1 entries
    std::vector<double> g;
    std::vector<double> h;
    std::vector<std::uint32_t> count;

    explicit Histogram(const BinEdges& edges) {
        offset.resize(edges.n_features() + 1, 0);
        for (std::size_t f = 0; f < edges.n_features(); ++f) offset[f + 1] = offset[f] + edges.n_bins(f);
        g.assign(offset.back(), 0.0);
        h.assign(offset.back(), 0.0);
        count.assign(offset.back(), 0);
    }

    std::size_t n_bins(std::size_t f) const { return offset[f + 1] - offset[f]; }
};

/// Accumulates rows `idx` in order, one feature per task, so the result does
/// not depend on the worker count.
inline Histogram build_histogram(const BinnedDataset& data, const GradHess& gh, std::span<const std::size_t> idx,
                                 std::span<const std::size_t> features, int n_threads = 1) {
    Histogram hist(data.edges);
    parallel_for(
        features.size(), n_threads,
        [&](std::size_t b, std::size_t e) {
            for (std::size_t k = b; k < e; ++k) {
                const std::size_t f = features[k];
                const auto& col = data.bins[f];
                const std::size_t off = hist.offset[f];
                for (auto i : idx) {
                    const std::size_t slot = off + col[i];
                    hist.g[slot] += gh.g[i];
                    hist.h[slot] += gh.h[i];
                    hist.count[slot] += 1;
                }
            }
        },
        idx.size());
    return hist;
}

struct SplitCandidate {
    int feature = -1;
    int threshold = -1;
    double gain = 0.0;
};

/// Best (feature, bin) over `features`. A candidate qualifies when its gain
/// exceeds min_split_gain strictly, both children hold at least
/// min_data_in_leaf rows, and both children's mean hessian plus lambda/n
/// exceeds kHessianEps. Equal gains keep the lowest feature, then lowest bin.
inline std::optional<SplitCandidate> find_best_split(const Histogram& hist, std::span<const std::size_t> features,
                                                     const TreeConfig& cfg, const NodeTotals& totals) {
    std::optional<SplitCandidate> best;
    const auto min_rows = static_cast<std::size_t>(cfg.min_data_in_leaf);
    if (totals.count < 2 * min_rows) return best;
    for (auto f : features) {
        const std::size_t off = hist.offset[f];
        const std::size_t nb = hist.n_bins(f);
        double gl = 0.0, hl = 0.0;
        std::size_t cl = 0;
        for (std::size_t b = 0; b + 1 < nb; ++b) {
            gl += hist.g[off + b];
            hl += hist.h[off + b];
            cl += hist.count[off + b];
            if (cl < min_rows) continue;
            const std::size_t cr = totals.count - cl;
            if (cr < min_rows) break;
            const double gr = totals.sum_g - gl;
            const double hr = totals.sum_h - hl;
            if (!((hl + cfg.lambda) / static_cast<double>(cl) > kHessianEps) ||
                !((hr + cfg.lambda) / static_cast<double>(cr) > kHessianEps) ||
                !(totals.sum_h + cfg.lambda > 0.0))
                continue;
            const double gain = split_gain(gl, hl, gr, hr, cfg.lambda);
            if (!std::isfinite(gain) || !(gain > cfg.min_split_gain)) continue;
            if (!best || gain > best->gain)
                best = SplitCandidate{static_cast<int>(f), static_cast<int>(b), gain};
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// Stochastic leaf weights
// ---------------------------------------------------------------------------

/// Second-order Taylor mean and first-order Taylor variance of
/// gbar / (hbar + lambda/n) from the leaf's sample moments (Bessel-corrected;
/// all dispersion terms are zero for a single row).
inline LeafStats leaf_stats(std::span<const double> g, std::span<const double> h, double lambda) {
    const std::size_t n = g.size();
    if (n == 0 || h.size() != n) throw Error(Errc::length_mismatch, "leaf needs matching, non-empty g and h");
    const double nd = static_cast<double>(n);
    double sg = 0.0, sh = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sg += g[i];
        sh += h[i];
    }
    const double g_mean = sg / nd;
    const double h_mean = sh / nd;
    double vg = 0.0, vh = 0.0, cgh = 0.0;
    if (n > 1) {
        for (std::size_t i = 0; i < n; ++i) {
            const double dg = g[i] - g_mean;
            const double dh = h[i] - h_mean;
            vg += dg * dg;
            vh += dh * dh;
            cgh += dg * dh;
        }
        vg /= nd - 1.0;
        vh /= nd - 1.0;
        cgh /= nd - 1.0;
    }
    const double denom = h_mean + lambda / nd;
    if (!(denom > kHessianEps))
        throw Error(Errc::degenerate_hessian, "mean hessian + lambda/n = " + format_double(denom));
    const double d2 = denom * denom;
    const double d3 = d2 * denom;
    LeafStats out;
    out.n = n;
    out.mu = g_mean / denom - cgh / d2 + g_mean * vh / d3;
    out.var = std::max(0.0, vg / d2 + g_mean * g_mean * vh / (d2 * d2) - 2.0 * g_mean * cgh / d3);
    return out;
}

// ---------------------------------------------------------------------------
// Tree growth
// ---------------------------------------------------------------------------

/// Features a tree may split on: all of them, or a seeded subset of
/// ceil(fraction * n_features) drawn once per tree, sorted ascending.
inline std::vector<std::size_t> sample_features(std::size_t n_features, double fraction, std::uint64_t seed) {
    std::vector<std::size_t> all(n_features);
    std::iota(all.begin(), all.end(), std::size_t{0});
    if (fraction >= 1.0) return all;
    auto k = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n_features)));
    k = std::clamp<std::size_t>(k, 1, n_features);
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n_features - 1);
        std::swap(all[i], all[pick(rng)]);
    }
    all.resize(k);
    std::sort(all.begin(), all.end());
    return all;
}

/// Grows one tree leaf-wise on the rows in `sample_mask`: the pending leaf
/// with the largest qualifying gain is split next, until max_leaves leaves
/// exist or none qualifies. If `leaf_members` is given it receives each
/// leaf's row indices.
inline Tree grow_tree(const BinnedDataset& data, const GradHess& gh, std::span<const std::size_t> sample_mask,
                      const TreeConfig& cfg, int n_threads = 1,
                      std::vector<std::vector<std::size_t>>* leaf_members = nullptr) {
    if (sample_mask.empty()) throw Error(Errc::empty_mask, "tree needs at least one row");
    if (gh.g.size() != data.n_samples || gh.h.size() != data.n_samples)
        throw Error(Errc::length_mismatch, "gradients are not aligned with the dataset");

    const auto features = sample_features(data.n_features, cfg.feature_fraction, cfg.seed);

    struct Pending {
        std::vector<std::size_t> idx;
        NodeTotals totals;
        std::optional<SplitCandidate> best;
        int parent = -1;  // split node owning this leaf, -1 for the root
        bool is_left = false;
    };

    auto evaluate = [&](Pending& p) {
        p.totals = node_totals(gh, p.idx);
        if (cfg.max_leaves <= 1) return;
        auto hist = build_histogram(data, gh, p.idx, features, n_threads);
        p.best = find_best_split(hist, features, cfg, p.totals);
    };

    std::vector<Pending> pending;
    pending.push_back(Pending{{sample_mask.begin(), sample_mask.end()}, {}, std::nullopt, -1, false});
    evaluate(pending.front());

    Tree tree;
    while (static_cast<int>(pending.size()) < cfg.max_leaves) {
        std::optional<std::size_t> pick;
        for (std::size_t k = 0; k < pending.size(); ++k)
            if (pending[k].best && (!pick || pending[k].best->gain > pending[*pick].best->gain)) pick = k;
        if (!pick) break;

        Pending parent = std::move(pending[*pick]);
        const auto split = *parent.best;
        const int node_id = static_cast<int>(tree.nodes.size());
        tree.nodes.push_back(SplitNode{split.feature, split.threshold, 0, 0, split.gain});
        if (parent.parent >= 0) {
            auto& up = tree.nodes[static_cast<std::size_t>(parent.parent)];
            (parent.is_left ? up.left : up.right) = node_id;
        }

        Pending left, right;
        const auto& col = data.bins[static_cast<std::size_t>(split.feature)];
        for (auto i : parent.idx) (static_cast<int>(col[i]) <= split.threshold ? left.idx : right.idx).push_back(i);
        left.parent = right.parent = node_id;
        left.is_left = true;
        evaluate(left);
        evaluate(right);
        pending[*pick] = std::move(left);
        pending.push_back(std::move(right));
    }

    tree.leaves.reserve(pending.size());
    if (leaf_members) leaf_members->clear();
    std::vector<double> gs, hs;
    for (std::size_t k = 0; k < pending.size(); ++k) {
        auto& p = pending[k];
        gs.clear();
        hs.clear();
        for (auto i : p.idx) {
            gs.push_back(gh.g[i]);
            hs.push_back(gh.h[i]);
        }
        tree.leaves.push_back(leaf_stats(gs, hs, cfg.lambda));
        if (p.parent >= 0) {
            auto& up = tree.nodes[static_cast<std::size_t>(p.parent)];
            (p.is_left ? up.left : up.right) = Tree::leaf_ref(k);
        }
        if (leaf_members) leaf_members->push_back(std::move(p.idx));
    }
    return tree;
}

} // namespace pgbm
