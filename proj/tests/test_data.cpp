#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>

#include "test_support.hpp"

using namespace pgbm;
using pgbm_test::TempDir;

namespace {

Errc code_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "expected pgbm::Error";
    return Errc::invalid_config;
}

RawDataset one_column(std::vector<double> v) {
    std::vector<std::vector<double>> rows;
    for (double x : v) rows.push_back({x});
    return pgbm_test::make_dataset(rows, std::vector<double>(v.size(), 0.0));
}

}  // namespace

TEST(LoadCsv, ThreeRowFile) {
    TempDir dir;
    auto p = dir.write("a.csv", "a,b,y\n1,2,3\n4,5,6\n7,8,9\n");
    auto d = load_csv(p, "y");
    EXPECT_EQ(d.n_samples, 3u);
    EXPECT_EQ(d.n_features, 2u);
    EXPECT_EQ(d.feature_names, (std::vector<std::string>{"a", "b"}));
    EXPECT_EQ(d.target, (std::vector<double>{3, 6, 9}));
    EXPECT_EQ(d.at(2, 1), 8.0);
}

TEST(LoadCsv, TargetInMiddleKeepsFeatureOrder) {
    TempDir dir;
    auto p = dir.write("a.csv", "a,y,b\n1,2,3\n");
    auto d = load_csv(p, "y");
    EXPECT_EQ(d.feature_names, (std::vector<std::string>{"a", "b"}));
    EXPECT_EQ(d.at(0, 1), 3.0);
    EXPECT_EQ(d.target[0], 2.0);
}

TEST(LoadCsv, NanCellIsNonFinite) {
    TempDir dir;
    auto p = dir.write("a.csv", "a,y\n1,2\nNaN,3\n");
    EXPECT_EQ(code_of([&] { load_csv(p, "y"); }), Errc::non_finite_value);
    auto q = dir.write("b.csv", "a,y\n1,inf\n");
    EXPECT_EQ(code_of([&] { load_csv(q, "y"); }), Errc::non_finite_value);
}

TEST(LoadCsv, ErrorKinds) {
    TempDir dir;
    EXPECT_EQ(code_of([&] { load_csv(dir.write("a.csv", "a,b\n1,2\n"), "y"); }), Errc::missing_column);
    EXPECT_EQ(code_of([&] { load_csv(dir.write("b.csv", "a,y\n1,x\n"), "y"); }), Errc::parse_error);
    EXPECT_EQ(code_of([&] { load_csv(dir.write("c.csv", "a,y\n"), "y"); }), Errc::empty_dataset);
    EXPECT_EQ(code_of([&] { load_csv(dir.write("d.csv", "a,y\n1,2,3\n"), "y"); }), Errc::parse_error);
    EXPECT_EQ(code_of([&] { load_csv(dir.file("missing.csv"), "y"); }), Errc::io_error);
}

TEST(LoadCsv, ParseErrorNamesRowAndColumn) {
    TempDir dir;
    auto p = dir.write("a.csv", "a,b,y\n1,2,3\n4,oops,6\n");
    try {
        load_csv(p, "y");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::parse_error);
        EXPECT_NE(std::string(e.what()).find("row 2"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("column 1"), std::string::npos);
    }
}

TEST(LoadCsv, BostonShapedFile) {
    TempDir dir;
    std::ostringstream out;
    for (int c = 0; c < 13; ++c) out << "f" << c << ',';
    out << "medv\n";
    std::mt19937 rng(5);
    std::uniform_real_distribution<double> u(0, 100);
    for (int r = 0; r < 506; ++r) {
        for (int c = 0; c < 14; ++c) out << (c ? "," : "") << pgbm::format_double(u(rng));
        out << '\n';
    }
    auto d = load_csv(dir.write("boston.csv", out.str()), "medv");
    EXPECT_EQ(d.n_samples, 506u);
    EXPECT_EQ(d.n_features, 13u);
}

TEST(LoadCsv, WineFileShape) {
    auto d = load_csv(std::string(PGBM_DATA_DIR) + "/winequality-red.csv", "quality");
    EXPECT_EQ(d.n_samples, 1599u);
    EXPECT_EQ(d.n_features, 11u);
}

TEST(LoadCsvForModel, SelectsColumnsByName) {
    TempDir dir;
    auto p = dir.write("a.csv", "b,y,a\n1,2,3\n");
    auto d = load_csv_for_model(p, {"a", "b"}, "y");
    EXPECT_EQ(d.at(0, 0), 3.0);
    EXPECT_EQ(d.at(0, 1), 1.0);
    EXPECT_EQ(d.target, std::vector<double>{2.0});
    auto no_target = load_csv_for_model(dir.write("b.csv", "a,b\n3,1\n"), {"a", "b"}, "y");
    EXPECT_FALSE(no_target.has_target());
    EXPECT_EQ(code_of([&] { load_csv_for_model(dir.write("c.csv", "a,c\n3,1\n"), {"a", "b"}, "y"); }),
              Errc::feature_count_mismatch);
    EXPECT_EQ(code_of([&] { load_csv_for_model(dir.write("d.csv", "a\n3\n"), {"a", "b"}, "y"); }),
              Errc::feature_count_mismatch);
}

TEST(BinEdges, QuantileSplitOfFourValues) {
    auto e = compute_bin_edges(one_column({1, 2, 3, 4}), 2);
    ASSERT_EQ(e.edges[0].size(), 1u);
    auto b = apply_bins(one_column({1, 2, 3, 4}), e);
    EXPECT_EQ(b.bins[0], (std::vector<BinIndex>{0, 0, 1, 1}));
}

TEST(BinEdges, ConstantFeatureHasSingleBin) {
    for (int mb : {2, 16, 255}) {
        auto e = compute_bin_edges(one_column({5, 5, 5}), mb);
        EXPECT_TRUE(e.edges[0].empty());
        EXPECT_EQ(e.n_bins(0), 1u);
    }
}

TEST(BinEdges, DuplicateQuantilesCollapse) {
    auto d = one_column({1, 1, 1, 9});
    auto e = compute_bin_edges(d, 4);
    ASSERT_EQ(e.edges[0].size(), 1u);
    EXPECT_GE(e.edges[0][0], 1.0);
    EXPECT_LT(e.edges[0][0], 9.0);
    auto b = apply_bins(d, e);
    EXPECT_EQ(b.bins[0], (std::vector<BinIndex>{0, 0, 0, 1}));
}

TEST(BinEdges, FewDistinctValuesGetOneBinEach) {
    auto d = one_column({3, 1, 2, 3, 1, 2, 7});
    auto e = compute_bin_edges(d, 8);
    EXPECT_EQ(e.n_bins(0), 4u);
    auto b = apply_bins(d, e);
    std::set<BinIndex> seen(b.bins[0].begin(), b.bins[0].end());
    EXPECT_EQ(seen.size(), 4u);
}

TEST(BinEdges, RejectsTooFewBins) {
    EXPECT_EQ(code_of([] { compute_bin_edges(one_column({1, 2}), 1); }), Errc::invalid_config);
}

TEST(ApplyBins, TieAndClampRules) {
    std::vector<double> edges{2.5};
    EXPECT_EQ(bin_value(edges, 2.0), 0);
    EXPECT_EQ(bin_value(edges, 2.5), 0);
    EXPECT_EQ(bin_value(edges, 99.0), 1);
    EXPECT_EQ(bin_value(edges, -99.0), 0);
}

TEST(ApplyBins, FeatureCountMismatch) {
    auto e = compute_bin_edges(one_column({1, 2, 3}), 4);
    auto two = pgbm_test::make_dataset({{1, 2}}, {0});
    EXPECT_EQ(code_of([&] { apply_bins(two, e); }), Errc::feature_count_mismatch);
}

class BinningProperties : public ::testing::TestWithParam<int> {};

TEST_P(BinningProperties, Invariants) {
    const int max_bins = GetParam();
    std::mt19937_64 rng(static_cast<std::uint64_t>(max_bins));
    std::normal_distribution<double> nd(0, 1);
    std::uniform_int_distribution<int> small(0, 5);
    const std::size_t n = 777;
    std::vector<std::vector<double>> rows(n, std::vector<double>(3));
    for (auto& r : rows) {
        r[0] = nd(rng);
        r[1] = small(rng);              // few distinct values
        r[2] = std::round(nd(rng) * 4);  // heavy ties
    }
    auto d = pgbm_test::make_dataset(rows, std::vector<double>(n, 0.0));
    auto e = compute_bin_edges(d, max_bins);
    auto b = apply_bins(d, e);
    for (std::size_t f = 0; f < 3; ++f) {
        const auto& ef = e.edges[f];
        EXPECT_TRUE(std::adjacent_find(ef.begin(), ef.end(), std::greater_equal<>()) == ef.end());
        EXPECT_LE(e.n_bins(f), static_cast<std::size_t>(max_bins));
        auto col = d.column(f);
        std::set<double> distinct(col.begin(), col.end());
        std::set<BinIndex> used(b.bins[f].begin(), b.bins[f].end());
        EXPECT_LE(used.size(), std::min<std::size_t>(max_bins, distinct.size()));
        if (distinct.size() <= static_cast<std::size_t>(max_bins)) EXPECT_EQ(used.size(), distinct.size());
        // monotone
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](auto a, auto c) { return col[a] < col[c]; });
        for (std::size_t k = 1; k < n; ++k) EXPECT_LE(b.bins[f][order[k - 1]], b.bins[f][order[k]]);
        for (auto bin : b.bins[f]) EXPECT_LT(bin, e.n_bins(f));
        // idempotent on bin representatives (the largest value in each bin)
        std::vector<double> rep(e.n_bins(f), -std::numeric_limits<double>::infinity());
        for (std::size_t i = 0; i < n; ++i) rep[b.bins[f][i]] = std::max(rep[b.bins[f][i]], col[i]);
        for (std::size_t k = 0; k < rep.size(); ++k)
            if (std::isfinite(rep[k])) EXPECT_EQ(bin_value(ef, rep[k]), k);
    }
    // edges fitted on train reproduce the training bins, with any thread count
    EXPECT_EQ(apply_bins(d, e, 4).bins, b.bins);
    EXPECT_EQ(compute_bin_edges(d, max_bins, 3), e);
}

INSTANTIATE_TEST_SUITE_P(MaxBins, BinningProperties, ::testing::Values(2, 4, 16, 64, 255));
