#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "test_support.hpp"

using namespace pgbm;

namespace {

HierarchySpec two_series_spec() {
    HierarchySpec s;
    HierarchyLevel l1, l3;
    l1.weight = 0.25;
    l1.groups = {{0}};
    l1.keys = {"s1"};
    // second series lives in its own level with the same weight
    l1.groups.push_back({1});
    l1.keys.push_back("s2");
    l3.weight = 0.5;
    l3.groups = {{0, 1}};
    l3.keys = {"total"};
    s.levels = {l1, l3};
    return s;
}

HierarchySpec identity_only(double w = 1.0) {
    HierarchySpec s;
    HierarchyLevel l;
    l.identity = true;
    l.weight = w;
    s.levels = {l};
    return s;
}

}  // namespace

TEST(MseGradHess, HandDerivatives) {
    auto a = mse_gradhess(std::vector<double>{1}, std::vector<double>{1});
    EXPECT_EQ(a.g, std::vector<double>{0});
    EXPECT_EQ(a.h, std::vector<double>{2});
    auto b = mse_gradhess(std::vector<double>{1, 2}, std::vector<double>{0, 0});
    EXPECT_EQ(b.g, (std::vector<double>{-2, -4}));
    EXPECT_EQ(b.h, (std::vector<double>{2, 2}));
    auto c = mse_gradhess(std::vector<double>{0}, std::vector<double>{3});
    EXPECT_EQ(c.g, std::vector<double>{6});
}

TEST(MseGradHess, LengthMismatch) {
    try {
        mse_gradhess(std::vector<double>{1, 2}, std::vector<double>{1});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::length_mismatch);
    }
}

TEST(HierWmse, LossExamples) {
    const std::vector<double> y{1, 2}, zero{0, 0};
    EXPECT_DOUBLE_EQ(hier_wmse_loss(y, zero, identity_only()), 5.0);
    EXPECT_DOUBLE_EQ(hier_wmse_loss(y, zero, two_series_spec()), 5.75);
    EXPECT_EQ(hier_wmse_loss(y, y, two_series_spec()), 0.0);
}

TEST(HierWmse, GradHessExamples) {
    const std::vector<double> y{1, 2}, zero{0, 0};
    auto gh = hier_wmse_gradhess(y, zero, two_series_spec());
    EXPECT_DOUBLE_EQ(gh.g[0], -3.5);
    EXPECT_DOUBLE_EQ(gh.h[0], 1.5);
    EXPECT_DOUBLE_EQ(gh.g[1], -2.0 * 0.25 * 2 - 2.0 * 0.5 * 3);

    auto id = hier_wmse_gradhess(y, zero, identity_only());
    auto mse = mse_gradhess(y, zero);
    EXPECT_EQ(id.g, mse.g);
    EXPECT_EQ(id.h, mse.h);

    auto still = hier_wmse_gradhess(y, y, two_series_spec());
    EXPECT_EQ(still.g, (std::vector<double>{0, 0}));
    EXPECT_EQ(still.h[0], still.h[1]);
}

TEST(HierWmse, IndexOutOfRange) {
    auto s = two_series_spec();
    s.levels[1].groups[0].push_back(7);
    try {
        hier_wmse_loss(std::vector<double>{1, 2}, std::vector<double>{0, 0}, s);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::index_out_of_range);
    }
}

TEST(HierWmse, CoordinateFiniteDifferences) {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> nd(0, 3);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 2 + rng() % 49;
        auto spec = pgbm_test::random_hierarchy(n, rng);
        spec.validate(n);
        std::vector<double> y(n), yhat(n);
        for (auto& v : y) v = nd(rng);
        for (auto& v : yhat) v = nd(rng);
        auto gh = hier_wmse_gradhess(y, yhat, spec);
        auto loss = [&](const std::vector<double>& p) { return hier_wmse_loss(y, p, spec); };
        for (std::size_t i = 0; i < n; ++i) {
            auto [g, h] = pgbm_test::fd_coordinate(loss, yhat, i, 1e-4);
            EXPECT_NEAR(g, gh.g[i], 1e-5 * std::max(1.0, std::abs(gh.g[i])));
            EXPECT_LT(pgbm_test::rel_err(h, gh.h[i]), 1e-3);
            EXPECT_GT(gh.h[i], 0.0);
        }
    }
}

TEST(HierWmse, DirectionalDerivative) {
    std::mt19937_64 rng(12);
    std::normal_distribution<double> nd(0, 1);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 3 + rng() % 40;
        auto spec = pgbm_test::random_hierarchy(n, rng);
        std::vector<double> y(n), yhat(n), d(n);
        for (auto& v : y) v = 2 * nd(rng);
        for (auto& v : yhat) v = 2 * nd(rng);
        for (auto& v : d) v = nd(rng);
        auto gh = hier_wmse_gradhess(y, yhat, spec);
        const double t = 1e-4;
        std::vector<double> p(n), m(n);
        for (std::size_t i = 0; i < n; ++i) {
            p[i] = yhat[i] + t * d[i];
            m[i] = yhat[i] - t * d[i];
        }
        const double fd = (hier_wmse_loss(y, p, spec) - hier_wmse_loss(y, m, spec)) / (2 * t);
        double gd = 0.0;
        for (std::size_t i = 0; i < n; ++i) gd += gh.g[i] * d[i];
        EXPECT_LT(pgbm_test::rel_err(fd, gd), 1e-6) << fd << " vs " << gd;
    }
}

TEST(NumericGradHess, SquaredLoss) {
    auto gh = numeric_gradhess([](double y, double p) { return (y - p) * (y - p); }, std::vector<double>{1},
                               std::vector<double>{0}, 1e-5);
    EXPECT_NEAR(gh.g[0], -2.0, 1e-6);
    EXPECT_NEAR(gh.h[0], 2.0, 1e-3);
}

TEST(NumericGradHess, AbsoluteLossAwayFromKink) {
    auto gh = numeric_gradhess([](double y, double p) { return std::abs(y - p); }, std::vector<double>{0},
                               std::vector<double>{5});
    EXPECT_NEAR(gh.g[0], 1.0, 1e-9);
    EXPECT_NEAR(gh.h[0], 0.0, 1e-6);
}

TEST(NumericGradHess, ConstantLoss) {
    auto gh = numeric_gradhess([](double, double) { return 4.2; }, std::vector<double>{0, 1},
                               std::vector<double>{5, -3});
    EXPECT_EQ(gh.g, (std::vector<double>{0, 0}));
    EXPECT_EQ(gh.h, (std::vector<double>{0, 0}));
}

TEST(NumericGradHess, NonFiniteLoss) {
    try {
        numeric_gradhess([](double, double p) { return std::log(p); }, std::vector<double>{0},
                         std::vector<double>{0});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::non_finite_loss);
    }
}

TEST(NumericGradHess, AgreesWithAnalyticMse) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> nd(0, 10);
    std::vector<double> y(200), yhat(200);
    for (auto& v : y) v = nd(rng);
    for (auto& v : yhat) v = nd(rng);
    auto a = mse_gradhess(y, yhat);
    auto n = numeric_gradhess([](double t, double p) { return (t - p) * (t - p); }, y, yhat);
    for (std::size_t i = 0; i < y.size(); ++i) {
        EXPECT_LT(pgbm_test::rel_err(a.g[i], n.g[i]), 1e-5);
        EXPECT_LT(pgbm_test::rel_err(a.h[i], n.h[i]), 1e-3);
    }
}

TEST(HierarchyFile, RoundTripAndValidation) {
    std::istringstream in(
        "# toy\n"
        "levels=3\n"
        "level 0 weight=0.25 identity\n"
        "level 1 weight=0.25\n"
        "group a: 0,1\n"
        "group b: 2\n"
        "level 2 weight=0.5\n"
        "group total: 0,1,2\n");
    auto spec = parse_hierarchy(in);
    ASSERT_EQ(spec.levels.size(), 3u);
    EXPECT_TRUE(spec.levels[0].identity);
    EXPECT_EQ(spec.levels[1].keys, (std::vector<std::string>{"a", "b"}));
    EXPECT_EQ(spec.levels[2].groups[0], (std::vector<std::size_t>{0, 1, 2}));
    spec.validate(3);
    EXPECT_THROW(spec.validate(4), Error);

    std::ostringstream out;
    write_hierarchy(out, spec);
    std::istringstream back(out.str());
    auto again = parse_hierarchy(back);
    std::ostringstream out2;
    write_hierarchy(out2, again);
    EXPECT_EQ(out.str(), out2.str());
}

TEST(HierarchyFile, ParseErrorsCarryLineNumbers) {
    std::istringstream in("levels=1\nlevel 0 weight=abc\n");
    try {
        parse_hierarchy(in);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::parse_error);
        EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
    }
    std::istringstream dup("levels=1\nlevel 0 weight=1\ngroup a: 0,0\n");
    auto spec = parse_hierarchy(dup);
    EXPECT_THROW(spec.validate(1), Error);
}
