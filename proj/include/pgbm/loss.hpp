#pragma once
#include <cmath>
#include <cstddef>
#include <fstream>
#include <functional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "error.hpp"
#include "util.hpp"

namespace pgbm {

/// Per-sample first and second derivatives of the loss w.r.t. the estimate.
struct GradHess {
    std::vector<double> g;
    std::vector<double> h;

    std::size_t size() const { return g.size(); }
};

namespace detail {

inline void check_lengths(std::span<const double> y, std::span<const double> yhat) {
    if (y.size() != yhat.size() || y.empty())
        throw Error(Errc::length_mismatch, "y has " + std::to_string(y.size()) + " entries, yhat has " +
                                               std::to_string(yhat.size()));
}

} // namespace detail

/// l_i = (y_i - yhat_i)^2, without the 1/2 factor.
inline GradHess mse_gradhess(std::span<const double> y, std::span<const double> yhat) {
    detail::check_lengths(y, yhat);
    GradHess gh;
    gh.g.resize(y.size());
    gh.h.assign(y.size(), 2.0);
    for (std::size_t i = 0; i < y.size(); ++i) gh.g[i] = 2.0 * (yhat[i] - y[i]);
    return gh;
}

// ---------------------------------------------------------------------------
// Hierarchical weighted squared error
// ---------------------------------------------------------------------------

/// One aggregation level: a weight and a partition of the sample rows.
/// Identity levels put every row in its own group without listing them.
struct HierarchyLevel {
    double weight = 1.0;
    bool identity = false;
    std::vector<std::string> keys;
    std::vector<std::vector<std::size_t>> groups;
};

struct HierarchySpec {
    std::vector<HierarchyLevel> levels;

    double weight_sum() const {
        double s = 0.0;
        for (auto& l : levels) s += l.weight;
        return s;
    }

    /// Throws unless every level partitions [0, n) exactly.
    void validate(std::size_t n) const {
        if (levels.empty()) throw Error(Errc::invalid_config, "hierarchy has no levels");
        bool any_positive = false;
        for (std::size_t a = 0; a < levels.size(); ++a) {
            const auto& lvl = levels[a];
            if (!(lvl.weight >= 0.0) || !std::isfinite(lvl.weight))
                throw Error(Errc::invalid_config, "level " + std::to_string(a) + " has a negative weight");
            any_positive = any_positive || lvl.weight > 0.0;
            if (lvl.identity) continue;
            std::vector<char> seen(n, 0);
            for (auto& members : lvl.groups) {
                for (auto i : members) {
                    if (i >= n)
                        throw Error(Errc::index_out_of_range,
                                    "level " + std::to_string(a) + " references row " + std::to_string(i) +
                                        " of " + std::to_string(n));
                    if (seen[i]++)
                        throw Error(Errc::invalid_config, "level " + std::to_string(a) + " lists row " +
                                                              std::to_string(i) + " twice");
                }
            }
            for (std::size_t i = 0; i < n; ++i)
                if (!seen[i])
                    throw Error(Errc::invalid_config,
                                "level " + std::to_string(a) + " does not cover row " + std::to_string(i));
        }
        if (!any_positive) throw Error(Errc::invalid_config, "all hierarchy weights are zero");
    }
};

namespace detail {

inline void check_indices(const HierarchySpec& spec, std::size_t n) {
    for (auto& lvl : spec.levels)
        for (auto& members : lvl.groups)
            for (auto i : members)
                if (i >= n)
                    throw Error(Errc::index_out_of_range,
                                "hierarchy references row " + std::to_string(i) + " of " + std::to_string(n));
}

} // namespace detail

/// L = sum_levels sum_groups w_a * (sum_group y - sum_group yhat)^2
inline double hier_wmse_loss(std::span<const double> y, std::span<const double> yhat, const HierarchySpec& spec) {
    detail::check_lengths(y, yhat);
    detail::check_indices(spec, y.size());
    double total = 0.0;
    for (auto& lvl : spec.levels) {
        if (lvl.identity) {
            for (std::size_t i = 0; i < y.size(); ++i) {
                const double r = y[i] - yhat[i];
                total += lvl.weight * r * r;
            }
            continue;
        }
        for (auto& members : lvl.groups) {
            double r = 0.0;
            for (auto i : members) r += y[i] - yhat[i];
            total += lvl.weight * r * r;
        }
    }
    return total;
}

/// g_i = -2 sum_a w_a r_{a,group(i)},  h_i = 2 sum_a w_a.
/// Group residuals are computed once per group and broadcast to members.
inline GradHess hier_wmse_gradhess(std::span<const double> y, std::span<const double> yhat,
                                   const HierarchySpec& spec) {
    detail::check_lengths(y, yhat);
    detail::check_indices(spec, y.size());
    const std::size_t n = y.size();
    GradHess gh;
    gh.g.assign(n, 0.0);
    gh.h.assign(n, 2.0 * spec.weight_sum());
    for (auto& lvl : spec.levels) {
        if (lvl.identity) {
            for (std::size_t i = 0; i < n; ++i) gh.g[i] += -2.0 * lvl.weight * (y[i] - yhat[i]);
            continue;
        }
        for (auto& members : lvl.groups) {
            double r = 0.0;
            for (auto i : members) r += y[i] - yhat[i];
            const double gi = -2.0 * lvl.weight * r;
            for (auto i : members) gh.g[i] += gi;
        }
    }
    return gh;
}

/// Hierarchy file:
///   levels=<k>
///   level <a> weight=<w> [identity]
///   group <key>: i1,i2,...
/// Blank lines and lines starting with '#' are ignored.
inline HierarchySpec parse_hierarchy(std::istream& in) {
    HierarchySpec spec;
    std::string raw;
    std::size_t lineno = 0;
    long declared = -1;
    auto fail = [&](const std::string& msg) {
        throw Error(Errc::parse_error, "hierarchy line " + std::to_string(lineno) + ": " + msg);
    };
    while (std::getline(in, raw)) {
        ++lineno;
        auto line = trim(raw);
        if (line.empty() || line.front() == '#') continue;
        if (line.starts_with("levels=")) {
            auto k = parse_int<long>(line.substr(7));
            if (!k || *k < 1) fail("bad level count");
            declared = *k;
        } else if (line.starts_with("level ")) {
            std::istringstream ss{std::string(line.substr(6))};
            std::string idx, weight, flag, extra;
            ss >> idx >> weight >> flag >> extra;
            auto a = parse_int<long>(idx);
            if (!a || *a != static_cast<long>(spec.levels.size())) fail("levels must be numbered 0,1,2,...");
            if (!weight.starts_with("weight=")) fail("expected weight=<w>");
            auto w = parse_double(std::string_view(weight).substr(7));
            if (!w) fail("bad weight");
            if (!extra.empty() || (!flag.empty() && flag != "identity")) fail("unexpected token");
            HierarchyLevel lvl;
            lvl.weight = *w;
            lvl.identity = flag == "identity";
            spec.levels.push_back(std::move(lvl));
        } else if (line.starts_with("group ")) {
            if (spec.levels.empty()) fail("group before any level");
            auto& lvl = spec.levels.back();
            if (lvl.identity) fail("identity level cannot list groups");
            const auto colon = line.find(':');
            if (colon == std::string_view::npos) fail("expected 'group <key>: i1,i2,...'");
            lvl.keys.emplace_back(trim(line.substr(6, colon - 6)));
            std::vector<std::size_t> members;
            auto rest = trim(line.substr(colon + 1));
            if (!rest.empty()) {
                for (auto tok : split(rest, ',')) {
                    auto i = parse_int<std::size_t>(tok);
                    if (!i) fail("bad row index '" + std::string(trim(tok)) + "'");
                    members.push_back(*i);
                }
            }
            lvl.groups.push_back(std::move(members));
        } else {
            fail("unrecognized line");
        }
    }
    if (declared < 0) throw Error(Errc::parse_error, "hierarchy: missing levels=<k> line");
    if (static_cast<long>(spec.levels.size()) != declared)
        throw Error(Errc::parse_error, "hierarchy: declared " + std::to_string(declared) + " levels, found " +
                                           std::to_string(spec.levels.size()));
    return spec;
}

inline HierarchySpec load_hierarchy(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::io_error, "cannot open " + path);
    return parse_hierarchy(in);
}

inline void write_hierarchy(std::ostream& out, const HierarchySpec& spec) {
    out << "levels=" << spec.levels.size() << '\n';
    for (std::size_t a = 0; a < spec.levels.size(); ++a) {
        const auto& lvl = spec.levels[a];
        out << "level " << a << " weight=" << format_double(lvl.weight);
        if (lvl.identity) out << " identity";
        out << '\n';
        if (lvl.identity) continue;
        for (std::size_t gi = 0; gi < lvl.groups.size(); ++gi) {
            out << "group " << (gi < lvl.keys.size() ? lvl.keys[gi] : std::to_string(gi)) << ':';
            for (std::size_t k = 0; k < lvl.groups[gi].size(); ++k) out << (k ? "," : " ") << lvl.groups[gi][k];
            out << '\n';
        }
    }
}

// ---------------------------------------------------------------------------
// Finite-difference provider for separable losses
// ---------------------------------------------------------------------------

using PointLoss = std::function<double(double y, double yhat)>;

inline constexpr double kDefaultFdStep = 1e-5;

/// Central differences with step delta = step * max(1, |yhat_i|).
inline GradHess numeric_gradhess(const PointLoss& loss, std::span<const double> y, std::span<const double> yhat,
                                 double step = kDefaultFdStep) {
    detail::check_lengths(y, yhat);
    if (!(step > 0.0)) throw Error(Errc::invalid_config, "finite-difference step must be positive");
    GradHess gh;
    gh.g.resize(y.size());
    gh.h.resize(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double d = step * std::max(1.0, std::abs(yhat[i]));
        const double lp = loss(y[i], yhat[i] + d);
        const double l0 = loss(y[i], yhat[i]);
        const double lm = loss(y[i], yhat[i] - d);
        if (!std::isfinite(lp) || !std::isfinite(l0) || !std::isfinite(lm))
            throw Error(Errc::non_finite_loss, "loss is not finite near sample " + std::to_string(i));
        gh.g[i] = (lp - lm) / (2.0 * d);
        gh.h[i] = (lp - 2.0 * l0 + lm) / (d * d);
    }
    return gh;
}

// ---------------------------------------------------------------------------
// Providers consumed by the training loop
// ---------------------------------------------------------------------------

using GradHessFn = std::function<GradHess(std::span<const double> y, std::span<const double> yhat)>;

struct Loss {
    std::string name;
    GradHessFn gradhess;
};

inline Loss mse_loss() { return {"mse", [](auto y, auto yhat) { return mse_gradhess(y, yhat); }}; }

inline Loss hier_wmse(HierarchySpec spec) {
    return {"hierwmse", [spec = std::move(spec)](auto y, auto yhat) { return hier_wmse_gradhess(y, yhat, spec); }};
}

inline Loss numeric_loss(std::string name, PointLoss fn, double step = kDefaultFdStep) {
    return {std::move(name),
            [fn = std::move(fn), step](auto y, auto yhat) { return numeric_gradhess(fn, y, yhat, step); }};
}

} // namespace pgbm
