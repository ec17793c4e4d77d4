#include <gtest/gtest.h>

#include <sstream>

#include "test_support.hpp"

using namespace pgbm;
using pgbm_test::TempDir;

namespace {

Ensemble trained_model(std::uint64_t seed, bool early_stop = false) {
    auto d = pgbm_test::random_regression(500, 3, seed);
    BoostConfig cfg;
    cfg.n_estimators = 30;
    cfg.bagging_fraction = 0.9;
    cfg.tree.max_leaves = 8;
    cfg.seed = seed;
    if (early_stop) {
        cfg.rho = 0.04;
        cfg.early_stopping_rounds = 5;
        auto v = pgbm_test::random_regression(100, 3, seed + 100);
        return train(d, mse_loss(), cfg, Validation{&v, StopMetric::rmse});
    }
    return train(d, mse_loss(), cfg);
}

std::string serialize(const Ensemble& m) {
    std::ostringstream out;
    write_model(out, m);
    return out.str();
}

Errc load_code(const std::string& text, std::string* message = nullptr) {
    std::istringstream in(text);
    try {
        read_model(in);
    } catch (const Error& e) {
        if (message) *message = e.what();
        return e.code();
    }
    ADD_FAILURE() << "model loaded unexpectedly";
    return Errc::invalid_config;
}

}  // namespace

TEST(ModelIo, RoundTripIsExact) {
    for (bool es : {false, true}) {
        auto m = trained_model(3, es);
        const auto text = serialize(m);
        std::istringstream in(text);
        auto back = read_model(in);
        EXPECT_EQ(back, m);
        EXPECT_EQ(serialize(back), text);
        EXPECT_EQ(back.config.early_stopping_rounds, m.config.early_stopping_rounds);
        EXPECT_EQ(back.config.rho, m.config.rho);

        auto d = pgbm_test::random_regression(200, 3, 77);
        auto a = predict_moments(m, d), b = predict_moments(back, d);
        EXPECT_EQ(a.mu, b.mu);
        EXPECT_EQ(a.var, b.var);
    }
}

TEST(ModelIo, SaveAndLoadFiles) {
    TempDir dir;
    auto m = trained_model(4);
    save(m, dir.file("m.txt"));
    auto back = load(dir.file("m.txt"));
    EXPECT_EQ(back, m);
    save(back, dir.file("m2.txt"));
    EXPECT_EQ(pgbm_test::read_file(dir.file("m.txt")), pgbm_test::read_file(dir.file("m2.txt")));
    EXPECT_THROW(load(dir.file("nope.txt")), Error);
}

TEST(ModelIo, FutureVersionIsRejected) {
    auto text = serialize(trained_model(5));
    text.replace(0, std::string(kModelHeader).size(), "pgbmfmt v2");
    EXPECT_EQ(load_code(text), Errc::version_mismatch);
    EXPECT_EQ(load_code("hello\n"), Errc::corrupt_model);
}

TEST(ModelIo, TruncationReportsLine) {
    const auto text = serialize(trained_model(6));
    std::size_t lines = 0;
    for (char c : text) lines += c == '\n';
    for (std::size_t keep : {std::size_t{3}, lines / 2, lines - 1}) {
        std::string cut;
        std::size_t seen = 0;
        for (char c : text) {
            if (seen == keep) break;
            cut += c;
            seen += c == '\n';
        }
        std::string msg;
        EXPECT_EQ(load_code(cut, &msg), Errc::corrupt_model) << keep;
        EXPECT_NE(msg.find("line " + std::to_string(keep + 1)), std::string::npos) << msg;
    }
}

TEST(ModelIo, StructuralCorruption) {
    const auto text = serialize(trained_model(7));
    auto replace_line = [&](const std::string& prefix, const std::string& with) {
        auto pos = text.find("\n" + prefix);
        EXPECT_NE(pos, std::string::npos) << prefix;
        auto end = text.find('\n', pos + 1);
        return text.substr(0, pos + 1) + with + text.substr(end);
    };
    EXPECT_EQ(load_code(replace_line("y0=", "y0=abc")), Errc::corrupt_model);
    EXPECT_EQ(load_code(replace_line("y0=", "colour=blue")), Errc::corrupt_model);
    EXPECT_EQ(load_code(replace_line("leaf 0 ", "leaf 0 1 -1 3")), Errc::corrupt_model);
    EXPECT_EQ(load_code(replace_line("node 0 ", "node 0 99 0 -1 -2 1")), Errc::corrupt_model);
    EXPECT_EQ(load_code(text + "extra\n"), Errc::corrupt_model);
}
