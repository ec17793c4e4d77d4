#pragma once
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "boost.hpp"
#include "error.hpp"
#include "util.hpp"

namespace pgbm {

enum class Family {
    normal,
    studentt3,
    logistic,
    laplace,
    lognormal,
    gumbel,
    weibull,
    poisson,
    negativebinomial,
};

inline constexpr std::array kAllFamilies = {
    Family::normal, Family::studentt3, Family::logistic, Family::laplace,         Family::lognormal,
    Family::gumbel, Family::weibull,   Family::poisson,  Family::negativebinomial,
};

inline std::string_view family_name(Family f) {
    switch (f) {
    case Family::normal: return "normal";
    case Family::studentt3: return "studentt3";
    case Family::logistic: return "logistic";
    case Family::laplace: return "laplace";
    case Family::lognormal: return "lognormal";
    case Family::gumbel: return "gumbel";
    case Family::weibull: return "weibull";
    case Family::poisson: return "poisson";
    case Family::negativebinomial: return "negativebinomial";
    }
    return "?";
}

inline Family parse_family(std::string_view name) {
    for (auto f : kAllFamilies)
        if (family_name(f) == name) return f;
    throw Error(Errc::invalid_config, "unknown distribution '" + std::string(name) + "'");
}

inline bool is_discrete(Family f) { return f == Family::poisson || f == Family::negativebinomial; }

struct DistSpec {
    Family family = Family::normal;
    bool clamp_nonneg = false;
};

/// Moment-matched parameters. Meaning of (a, b) per family:
///   normal (mean, sd) | studentt3 (location, scale) | logistic (location, s)
///   laplace (location, b) | lognormal (log-mean m, log-sd) | gumbel (location, beta)
///   weibull (shape k, scale) | poisson (rate, -) | negativebinomial (r, p)
/// `point_mass` marks a continuous family matched to zero variance; it
/// samples exactly `mean`.
struct DistParams {
    Family family = Family::normal;
    double a = 0.0;
    double b = 0.0;
    bool point_mass = false;
    double mean = 0.0;
};

inline constexpr double kEulerGamma = 0.57721566490153286061;
inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kWeibullShapeMin = 0.1;
inline constexpr double kWeibullShapeMax = 50.0;

namespace detail {

[[noreturn]] inline void infeasible(Family f, double mu, double var) {
    throw Error(Errc::infeasible_moments, std::string(family_name(f)) + " cannot match mean " + format_double(mu) +
                                              ", variance " + format_double(var));
}

// Gamma(1 + 2/k) / Gamma(1 + 1/k)^2, decreasing in k.
inline double weibull_moment_ratio(double k) {
    const double g1 = std::tgamma(1.0 + 1.0 / k);
    return std::tgamma(1.0 + 2.0 / k) / (g1 * g1);
}

// Shape k with ratio(k) = target by bisection on [0.1, 50]. Runs until the
// bracket stops shrinking (at most 200 halvings).
inline std::optional<double> solve_weibull_shape(double target) {
    double lo = kWeibullShapeMin, hi = kWeibullShapeMax;
    const double f_lo = weibull_moment_ratio(lo) - target;
    const double f_hi = weibull_moment_ratio(hi) - target;
    if (f_lo < 0.0 || f_hi > 0.0) return std::nullopt;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;
        const double f = weibull_moment_ratio(mid) - target;
        if (f == 0.0) return mid;
        (f > 0.0 ? lo : hi) = mid;
    }
    const double f_lo2 = std::abs(weibull_moment_ratio(lo) - target);
    const double f_hi2 = std::abs(weibull_moment_ratio(hi) - target);
    return f_lo2 <= f_hi2 ? lo : hi;
}

} // namespace detail

inline DistParams match_params(Family family, double mu, double var) {
    if (!std::isfinite(mu) || !std::isfinite(var) || var < 0.0) detail::infeasible(family, mu, var);
    DistParams p;
    p.family = family;
    p.mean = mu;
    const bool needs_positive_mean =
        family == Family::lognormal || family == Family::weibull || is_discrete(family);
    if (needs_positive_mean && !(mu > 0.0)) detail::infeasible(family, mu, var);
    if (var == 0.0 && !is_discrete(family)) {
        p.point_mass = true;
        p.a = mu;
        return p;
    }
    switch (family) {
    case Family::normal:
        p.a = mu;
        p.b = std::sqrt(var);
        break;
    case Family::studentt3:  // Var(t_3) = 3 * scale^2
        p.a = mu;
        p.b = std::sqrt(var / 3.0);
        break;
    case Family::logistic:  // Var = s^2 pi^2 / 3
        p.a = mu;
        p.b = std::sqrt(3.0 * var) / kPi;
        break;
    case Family::laplace:  // Var = 2 b^2
        p.a = mu;
        p.b = std::sqrt(var / 2.0);
        break;
    case Family::lognormal: {
        const double s2 = std::log1p(var / (mu * mu));
        p.a = std::log(mu) - 0.5 * s2;
        p.b = std::sqrt(s2);
        break;
    }
    case Family::gumbel: {  // Var = pi^2 beta^2 / 6, mean = loc + gamma * beta
        const double beta = std::sqrt(6.0 * var) / kPi;
        p.a = mu - beta * kEulerGamma;
        p.b = beta;
        break;
    }
    case Family::weibull: {
        auto k = detail::solve_weibull_shape(1.0 + var / (mu * mu));
        if (!k) detail::infeasible(family, mu, var);
        p.a = *k;
        p.b = mu / std::tgamma(1.0 + 1.0 / *k);
        break;
    }
    case Family::poisson:
        p.a = mu;
        break;
    case Family::negativebinomial:
        if (!(var > mu)) detail::infeasible(family, mu, var);
        p.a = mu * mu / (var - mu);
        p.b = mu / var;
        break;
    }
    return p;
}

/// One draw from matched parameters.
template <class Rng>
double draw(const DistParams& p, Rng& rng) {
    if (p.point_mass) return p.a;
    switch (p.family) {
    case Family::normal: return std::normal_distribution<double>(p.a, p.b)(rng);
    case Family::studentt3: return p.a + p.b * std::student_t_distribution<double>(3.0)(rng);
    case Family::logistic: {
        std::uniform_real_distribution<double> u01(0.0, 1.0);
        double u;
        do u = u01(rng);
        while (u <= 0.0);
        return p.a + p.b * std::log(u / (1.0 - u));
    }
    case Family::laplace: {
        std::uniform_real_distribution<double> u01(0.0, 1.0);
        double u;
        do u = u01(rng);
        while (u <= 0.0);
        // inverse CDF on (0, 1)
        return u < 0.5 ? p.a + p.b * std::log(2.0 * u) : p.a - p.b * std::log(2.0 * (1.0 - u));
    }
    case Family::lognormal: return std::lognormal_distribution<double>(p.a, p.b)(rng);
    case Family::gumbel: return std::extreme_value_distribution<double>(p.a, p.b)(rng);
    case Family::weibull: return std::weibull_distribution<double>(p.a, p.b)(rng);
    case Family::poisson: return static_cast<double>(std::poisson_distribution<long long>(p.a)(rng));
    case Family::negativebinomial: {
        // Gamma-Poisson mixture supports non-integer r.
        const double lambda = std::gamma_distribution<double>(p.a, (1.0 - p.b) / p.b)(rng);
        if (!(lambda > 0.0)) return 0.0;
        return static_cast<double>(std::poisson_distribution<long long>(lambda)(rng));
    }
    }
    return p.a;
}

/// Draws per row, stored row by row: samples[row * n_draws + s].
struct SampleMatrix {
    std::vector<double> samples;
    std::size_t n_rows = 0;
    std::size_t n_draws = 0;
    std::uint64_t seed = 0;
    std::size_t fallback_rows = 0;  // rows sampled as normal because the family was infeasible

    double at(std::size_t draw_index, std::size_t row) const { return samples[row * n_draws + draw_index]; }

    std::span<const double> row(std::size_t r) const { return {samples.data() + r * n_draws, n_draws}; }
};

inline constexpr std::uint64_t kSampleSalt = 0x73616d70;  // "samp"

/// Seeded i.i.d. draws from the matched family for every row. Each row has
/// its own generator stream derived from (seed, row), so results do not depend
/// on scheduling. Infeasible rows fall back to the normal family.
inline SampleMatrix sample(const PredictiveMoments& moments, const DistSpec& spec, std::size_t n_draws,
                           std::uint64_t seed, int n_threads = 1) {
    if (n_draws < 1) throw Error(Errc::invalid_config, "need at least one sample per row");
    SampleMatrix out;
    out.n_rows = moments.size();
    out.n_draws = n_draws;
    out.seed = seed;
    out.samples.resize(out.n_rows * n_draws);
    std::vector<char> fell_back(out.n_rows, 0);
    parallel_for(
        out.n_rows, n_threads,
        [&](std::size_t b, std::size_t e) {
            for (std::size_t r = b; r < e; ++r) {
                DistParams p;
                try {
                    p = match_params(spec.family, moments.mu[r], moments.var[r]);
                } catch (const Error&) {
                    p = match_params(Family::normal, moments.mu[r], std::max(0.0, moments.var[r]));
                    fell_back[r] = 1;
                }
                std::mt19937_64 rng(derive_seed(seed, r, kSampleSalt));
                double* dst = out.samples.data() + r * n_draws;
                for (std::size_t s = 0; s < n_draws; ++s) {
                    double x = draw(p, rng);
                    if (spec.clamp_nonneg && x < 0.0) x = 0.0;
                    dst[s] = x;
                }
            }
        },
        n_draws);
    for (char f : fell_back) out.fallback_rows += static_cast<std::size_t>(f);
    return out;
}

} // namespace pgbm
