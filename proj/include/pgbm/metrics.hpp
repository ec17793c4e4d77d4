#pragma once
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dist.hpp"
#include "error.hpp"
#include "loss.hpp"
#include "util.hpp"

namespace pgbm {

enum class Metric { crps, rmse };

inline std::string_view metric_name(Metric m) { return m == Metric::crps ? "crps" : "rmse"; }

inline Metric parse_metric(std::string_view s) {
    if (s == "crps") return Metric::crps;
    if (s == "rmse") return Metric::rmse;
    throw Error(Errc::invalid_config, "unknown metric '" + std::string(s) + "'");
}

struct MetricReport {
    std::string name;
    std::string level = "global";
    double value = 0.0;
    std::size_t n = 0;
    std::vector<std::pair<std::string, double>> groups;  // optional per-group breakdown
};

/// Energy-form CRPS estimate of samples x against y:
///   (1/m) sum |x_i - y| - (1/(2 m^2)) sum_i sum_j |x_i - x_j|
/// The double sum is evaluated from sorted order in O(m log m).
inline double crps_empirical(std::span<const double> samples, double y) {
    const std::size_t m = samples.size();
    if (m == 0) throw Error(Errc::empty_samples, "CRPS needs at least one sample");
    std::vector<double> x(samples.begin(), samples.end());
    std::sort(x.begin(), x.end());
    double abs_err = 0.0;
    double pair_sum = 0.0;  // sum_{i<j} (x_j - x_i)
    for (std::size_t k = 0; k < m; ++k) {
        abs_err += std::abs(x[k] - y);
        pair_sum += (2.0 * static_cast<double>(k) - static_cast<double>(m) + 1.0) * x[k];
    }
    const double md = static_cast<double>(m);
    // sum_i sum_j |x_i - x_j| = 2 * pair_sum
    return abs_err / md - (2.0 * pair_sum) / (2.0 * md * md);
}

inline double rmse(std::span<const double> y, std::span<const double> yhat) {
    if (y.size() != yhat.size() || y.empty())
        throw Error(Errc::length_mismatch, "rmse needs equal, non-empty vectors");
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - yhat[i]) * (y[i] - yhat[i]);
    return std::sqrt(s / static_cast<double>(y.size()));
}

/// Mean per-row CRPS of a sample matrix.
inline double crps_mean(const SampleMatrix& s, std::span<const double> y) {
    if (s.n_rows != y.size() || y.empty())
        throw Error(Errc::length_mismatch, "sample matrix has " + std::to_string(s.n_rows) + " rows, targets " +
                                               std::to_string(y.size()));
    double total = 0.0;
    for (std::size_t r = 0; r < s.n_rows; ++r) total += crps_empirical(s.row(r), y[r]);
    return total / static_cast<double>(s.n_rows);
}

namespace detail {

struct LevelGroups {
    std::vector<std::string> keys;
    std::vector<std::vector<std::size_t>> members;
};

inline LevelGroups level_groups(const HierarchyLevel& lvl, std::size_t n) {
    LevelGroups out;
    if (lvl.identity) {
        out.keys.reserve(n);
        out.members.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            out.keys.push_back(std::to_string(i));
            out.members.push_back({i});
        }
        return out;
    }
    out.members = lvl.groups;
    for (std::size_t g = 0; g < lvl.groups.size(); ++g)
        out.keys.push_back(g < lvl.keys.size() ? lvl.keys[g] : std::to_string(g));
    return out;
}

} // namespace detail

/// Point RMSE per level: targets and means are summed within each group and
/// the groups of a level are scored together.
inline std::vector<MetricReport> hierarchical_rmse(std::span<const double> y, std::span<const double> mu,
                                                   const HierarchySpec& spec) {
    if (y.size() != mu.size() || y.empty()) throw Error(Errc::length_mismatch, "rmse needs equal, non-empty vectors");
    detail::check_indices(spec, y.size());
    std::vector<MetricReport> out;
    for (std::size_t a = 0; a < spec.levels.size(); ++a) {
        auto lg = detail::level_groups(spec.levels[a], y.size());
        std::vector<double> ya, pa;
        MetricReport rep{"rmse", std::to_string(a), 0.0, lg.members.size(), {}};
        for (std::size_t g = 0; g < lg.members.size(); ++g) {
            double sy = 0.0, sp = 0.0;
            for (auto i : lg.members[g]) {
                sy += y[i];
                sp += mu[i];
            }
            ya.push_back(sy);
            pa.push_back(sp);
            rep.groups.emplace_back(lg.keys[g], std::abs(sy - sp));
        }
        rep.value = rmse(ya, pa);
        out.push_back(std::move(rep));
    }
    return out;
}

/// CRPS per level. Aggregated draw s of a group is the sum of its members'
/// draw s, so each draw index is treated as one joint sample path.
inline std::vector<MetricReport> hierarchical_crps(std::span<const double> y, const SampleMatrix& s,
                                                   const HierarchySpec& spec) {
    if (s.n_rows != y.size() || y.empty()) throw Error(Errc::length_mismatch, "sample rows do not match targets");
    detail::check_indices(spec, y.size());
    std::vector<MetricReport> out;
    std::vector<double> path(s.n_draws);
    for (std::size_t a = 0; a < spec.levels.size(); ++a) {
        auto lg = detail::level_groups(spec.levels[a], y.size());
        MetricReport rep{"crps", std::to_string(a), 0.0, lg.members.size(), {}};
        double total = 0.0;
        for (std::size_t g = 0; g < lg.members.size(); ++g) {
            std::fill(path.begin(), path.end(), 0.0);
            double sy = 0.0;
            for (auto i : lg.members[g]) {
                sy += y[i];
                auto row = s.row(i);
                for (std::size_t d = 0; d < s.n_draws; ++d) path[d] += row[d];
            }
            const double c = crps_empirical(path, sy);
            total += c;
            rep.groups.emplace_back(lg.keys[g], c);
        }
        rep.value = total / static_cast<double>(lg.members.size());
        out.push_back(std::move(rep));
    }
    return out;
}

/// `metric,level,group,value,n` rows; per-group rows only when requested.
inline void write_report_csv(std::ostream& out, const std::vector<MetricReport>& reports, bool per_group = false) {
    out << "metric,level,group,value,n\n";
    for (auto& r : reports) {
        out << r.name << ',' << r.level << ",all," << format_double(r.value) << ',' << r.n << '\n';
        if (!per_group) continue;
        for (auto& [key, v] : r.groups) out << r.name << ',' << r.level << ',' << key << ',' << format_double(v) << ",1\n";
    }
}

} // namespace pgbm
