#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "test_support.hpp"

using namespace pgbm;

namespace {

double crps_bruteforce(const std::vector<double>& x, double y) {
    const double m = static_cast<double>(x.size());
    double a = 0, b = 0;
    for (double xi : x) {
        a += std::abs(xi - y);
        for (double xj : x) b += std::abs(xi - xj);
    }
    return a / m - b / (2 * m * m);
}

HierarchySpec toy_two_level() {
    HierarchySpec s;
    HierarchyLevel bottom;
    bottom.identity = true;
    HierarchyLevel top;
    top.keys = {"total"};
    top.groups = {{0, 1, 2}};
    s.levels = {bottom, top};
    return s;
}

}  // namespace

TEST(Crps, MatchesPairwiseDefinition) {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> nd(0, 2);
    for (std::size_t m : {1u, 2u, 3u, 10u, 257u}) {
        std::vector<double> x(m);
        for (auto& v : x) v = nd(rng);
        const double y = nd(rng);
        EXPECT_NEAR(crps_empirical(x, y), crps_bruteforce(x, y), 1e-12);
    }
}

TEST(Crps, DegenerateAndSingleSample) {
    EXPECT_EQ(crps_empirical(std::vector<double>(10, 3.0), 3.0), 0.0);
    EXPECT_DOUBLE_EQ(crps_empirical(std::vector<double>{2.0}, 5.0), 3.0);
    EXPECT_THROW(crps_empirical(std::vector<double>{}, 1.0), Error);
}

TEST(Crps, ApproachesNormalClosedForm) {
    // CRPS(N(0,1), 0) = 2 phi(0) - 1/sqrt(pi)
    const double expect = 2.0 / std::sqrt(2 * kPi) - 1.0 / std::sqrt(kPi);
    std::mt19937_64 rng(2);
    std::normal_distribution<double> nd(0, 1);
    std::vector<double> x(200000);
    for (auto& v : x) v = nd(rng);
    EXPECT_NEAR(crps_empirical(x, 0.0), expect, 3e-3);
}

TEST(Rmse, PerfectAndKnown) {
    std::vector<double> y{1, 2, 3};
    EXPECT_EQ(rmse(y, y), 0.0);
    EXPECT_DOUBLE_EQ(rmse(y, std::vector<double>{2, 3, 4}), 1.0);
    EXPECT_THROW(rmse(y, std::vector<double>{1}), Error);
}

TEST(CrpsMean, AveragesRows) {
    SampleMatrix s;
    s.n_rows = 2;
    s.n_draws = 2;
    s.samples = {0, 2, 5, 5};
    std::vector<double> y{1, 3};
    const double r0 = crps_bruteforce({0, 2}, 1), r1 = crps_bruteforce({5, 5}, 3);
    EXPECT_DOUBLE_EQ(crps_mean(s, y), (r0 + r1) / 2);
    EXPECT_THROW(crps_mean(s, std::vector<double>{1}), Error);
}

TEST(Hierarchical, TwoLevelsGiveTwoReportsPerMetric) {
    auto spec = toy_two_level();
    std::vector<double> y{1, 2, 3}, mu{1, 1, 1};
    auto r = hierarchical_rmse(y, mu, spec);
    ASSERT_EQ(r.size(), 2u);
    EXPECT_DOUBLE_EQ(r[0].value, rmse(y, mu));
    EXPECT_DOUBLE_EQ(r[1].value, 3.0);
    EXPECT_EQ(r[1].n, 1u);

    SampleMatrix s;
    s.n_rows = 3;
    s.n_draws = 2;
    s.samples = {0, 2, 1, 3, 2, 4};
    auto c = hierarchical_crps(y, s, spec);
    ASSERT_EQ(c.size(), 2u);
    EXPECT_DOUBLE_EQ(c[0].value, crps_mean(s, y));
    // aggregated paths: draw 0 sums to 3, draw 1 to 9; total y = 6
    EXPECT_DOUBLE_EQ(c[1].value, crps_bruteforce({3, 9}, 6));
}

TEST(Hierarchical, ReportCsv) {
    auto spec = toy_two_level();
    std::vector<double> y{1, 2, 3}, mu{1, 2, 3};
    auto r = hierarchical_rmse(y, mu, spec);
    std::ostringstream out;
    write_report_csv(out, r);
    EXPECT_EQ(out.str(), "metric,level,group,value,n\nrmse,0,all,0,3\nrmse,1,all,0,1\n");
    std::ostringstream per;
    write_report_csv(per, r, true);
    EXPECT_NE(per.str().find("rmse,1,total,0,1"), std::string::npos);
}

TEST(ParseMetric, Names) {
    EXPECT_EQ(parse_metric("crps"), Metric::crps);
    EXPECT_EQ(parse_metric("rmse"), Metric::rmse);
    EXPECT_THROW(parse_metric("mae"), Error);
}
