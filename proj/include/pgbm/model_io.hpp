#pragma once
#include <cmath>
#include <cstddef>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "boost.hpp"
#include "error.hpp"
#include "util.hpp"

// Text model format, one record per line:
//
//   pgbmfmt v1
//   key=value                            scalars and the config snapshot
//   edges <feature>: e1,e2,...           one line per feature, in order
//   trees=<count>
//   tree <k> nodes=<a> leaves=<b>
//   node <id> <feature> <threshold> <left> <right> <gain>
//   leaf <id> <mu> <var> <n>
//
// Child references use the in-memory encoding: r >= 0 is a node id, r < 0 is
// leaf ~r. Reals are written in shortest round-trip form.

namespace pgbm {

inline constexpr const char* kModelHeader = "pgbmfmt v1";

namespace detail {

inline std::string join_doubles(const std::vector<double>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += ',';
        s += format_double(v[i]);
    }
    return s;
}

} // namespace detail

inline void write_model(std::ostream& out, const Ensemble& m) {
    const auto& c = m.config;
    out << kModelHeader << '\n';
    out << "objective=" << m.objective << '\n';
    out << "target=" << m.target_name << '\n';
    out << "features=";
    for (std::size_t i = 0; i < m.feature_names.size(); ++i) out << (i ? "," : "") << m.feature_names[i];
    out << '\n';
    out << "n_features=" << m.n_features() << '\n';
    out << "n_train=" << m.n_train << '\n';
    out << "y0=" << format_double(m.y0) << '\n';
    out << "alpha=" << format_double(m.alpha) << '\n';
    out << "rho=" << format_double(m.rho) << '\n';
    out << "rho_mode=" << (c.rho ? "fixed" : "auto") << '\n';
    out << "n_estimators=" << c.n_estimators << '\n';
    out << "learning_rate=" << format_double(c.learning_rate) << '\n';
    out << "bagging_fraction=" << format_double(c.bagging_fraction) << '\n';
    out << "feature_fraction=" << format_double(c.tree.feature_fraction) << '\n';
    out << "max_bin=" << c.tree.max_bins << '\n';
    out << "max_leaves=" << c.tree.max_leaves << '\n';
    out << "lambda=" << format_double(c.tree.lambda) << '\n';
    out << "min_split_gain=" << format_double(c.tree.min_split_gain) << '\n';
    out << "min_data_in_leaf=" << c.tree.min_data_in_leaf << '\n';
    out << "early_stopping_rounds="
        << (c.early_stopping_rounds ? std::to_string(*c.early_stopping_rounds) : std::string("none")) << '\n';
    out << "seed=" << c.seed << '\n';
    for (std::size_t f = 0; f < m.edges.n_features(); ++f)
        out << "edges " << f << ": " << detail::join_doubles(m.edges.edges[f]) << '\n';
    out << "trees=" << m.trees.size() << '\n';
    for (std::size_t k = 0; k < m.trees.size(); ++k) {
        const auto& t = m.trees[k];
        out << "tree " << k << " nodes=" << t.nodes.size() << " leaves=" << t.leaves.size() << '\n';
        for (std::size_t i = 0; i < t.nodes.size(); ++i) {
            const auto& nd = t.nodes[i];
            out << "node " << i << ' ' << nd.feature << ' ' << nd.threshold << ' ' << nd.left << ' ' << nd.right << ' '
                << format_double(nd.gain) << '\n';
        }
        for (std::size_t i = 0; i < t.leaves.size(); ++i) {
            const auto& lf = t.leaves[i];
            out << "leaf " << i << ' ' << format_double(lf.mu) << ' ' << format_double(lf.var) << ' ' << lf.n << '\n';
        }
    }
}

inline void save(const Ensemble& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::io_error, "cannot write " + path);
    write_model(out, m);
    out.flush();
    if (!out) throw Error(Errc::io_error, "write failed for " + path);
}

namespace detail {

class ModelReader {
public:
    explicit ModelReader(std::istream& in) : in_(in) {}

    // Next line, or throws CorruptModel if the file ends early.
    std::string next(const char* expecting) {
        std::string line;
        if (!std::getline(in_, line)) fail(lineno_ + 1, std::string("unexpected end of file, expected ") + expecting);
        ++lineno_;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return line;
    }

    bool peek_eof() { return in_.peek() == std::char_traits<char>::eof(); }

    std::size_t line() const { return lineno_; }

    [[noreturn]] void fail(const std::string& msg) const { fail(lineno_, msg); }

    [[noreturn]] static void fail(std::size_t line, const std::string& msg) {
        throw Error(Errc::corrupt_model, "line " + std::to_string(line) + ": " + msg);
    }

    double real(std::string_view tok) const {
        auto v = parse_double(tok);
        if (!v || !std::isfinite(*v)) fail("bad number '" + std::string(tok) + "'");
        return *v;
    }

    template <class Int>
    Int integer(std::string_view tok) const {
        auto v = parse_int<Int>(tok);
        if (!v) fail("bad integer '" + std::string(tok) + "'");
        return *v;
    }

private:
    std::istream& in_;
    std::size_t lineno_ = 0;
};

inline std::vector<std::string_view> tokens(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && s[i] == ' ') ++i;
        const std::size_t b = i;
        while (i < s.size() && s[i] != ' ') ++i;
        if (i > b) out.push_back(s.substr(b, i - b));
    }
    return out;
}

// Expects "<key>=<int>" inside a token such as "nodes=3".
inline std::size_t keyed_count(const ModelReader& r, std::string_view tok, std::string_view key) {
    if (!tok.starts_with(key) || tok.size() <= key.size() || tok[key.size()] != '=')
        r.fail("expected " + std::string(key) + "=<count>");
    return r.integer<std::size_t>(tok.substr(key.size() + 1));
}

} // namespace detail

inline Ensemble read_model(std::istream& in) {
    detail::ModelReader r(in);
    const std::string header = r.next("header");
    if (header != kModelHeader) {
        if (header.starts_with("pgbmfmt "))
            throw Error(Errc::version_mismatch, "model format '" + header + "', this build reads '" + kModelHeader + "'");
        r.fail("not a pgbm model file");
    }

    std::map<std::string, std::string> kv;
    std::string line;
    while (true) {
        line = r.next("edges or trees");
        if (line.starts_with("edges ") || line.starts_with("trees=")) break;
        const auto eq = line.find('=');
        if (eq == std::string::npos) r.fail("expected key=value");
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }

    auto take = [&](const std::string& key) {
        auto it = kv.find(key);
        if (it == kv.end()) r.fail("missing key '" + key + "'");
        std::string v = it->second;
        kv.erase(it);
        return v;
    };

    Ensemble m;
    m.objective = take("objective");
    m.target_name = take("target");
    {
        const auto names = take("features");
        if (!names.empty())
            for (auto tok : split(names, ',')) m.feature_names.emplace_back(tok);
    }
    const auto n_features = r.integer<std::size_t>(take("n_features"));
    m.n_train = r.integer<std::size_t>(take("n_train"));
    m.y0 = r.real(take("y0"));
    m.alpha = r.real(take("alpha"));
    m.rho = r.real(take("rho"));
    const auto rho_mode = take("rho_mode");
    if (rho_mode != "auto" && rho_mode != "fixed") r.fail("rho_mode must be auto or fixed");
    auto& c = m.config;
    if (rho_mode == "fixed") c.rho = m.rho;
    c.n_estimators = r.integer<int>(take("n_estimators"));
    c.learning_rate = r.real(take("learning_rate"));
    c.bagging_fraction = r.real(take("bagging_fraction"));
    c.tree.feature_fraction = r.real(take("feature_fraction"));
    c.tree.max_bins = r.integer<int>(take("max_bin"));
    c.tree.max_leaves = r.integer<int>(take("max_leaves"));
    c.tree.lambda = r.real(take("lambda"));
    c.tree.min_split_gain = r.real(take("min_split_gain"));
    c.tree.min_data_in_leaf = r.integer<int>(take("min_data_in_leaf"));
    if (auto es = take("early_stopping_rounds"); es != "none") c.early_stopping_rounds = r.integer<int>(es);
    c.seed = r.integer<std::uint64_t>(take("seed"));
    c.tree.seed = c.seed;
    if (!kv.empty()) r.fail("unknown key '" + kv.begin()->first + "'");
    if (m.feature_names.size() != n_features) r.fail("features list does not match n_features");

    m.edges.edges.resize(n_features);
    for (std::size_t f = 0; f < n_features; ++f) {
        if (f > 0) line = r.next("edges");
        const std::string prefix = "edges " + std::to_string(f) + ":";
        if (!line.starts_with(prefix)) r.fail("expected '" + prefix + "'");
        auto rest = trim(std::string_view(line).substr(prefix.size()));
        auto& e = m.edges.edges[f];
        if (!rest.empty())
            for (auto tok : split(rest, ',')) e.push_back(r.real(tok));
        for (std::size_t i = 1; i < e.size(); ++i)
            if (!(e[i] > e[i - 1])) r.fail("edges must be strictly increasing");
        if (e.size() + 1 > static_cast<std::size_t>(kMaxSupportedBins)) r.fail("too many bins");
    }
    if (n_features > 0) line = r.next("trees=<count>");
    if (!line.starts_with("trees=")) r.fail("expected trees=<count>");
    const auto n_trees = r.integer<std::size_t>(std::string_view(line).substr(6));

    m.trees.resize(n_trees);
    for (std::size_t k = 0; k < n_trees; ++k) {
        line = r.next("tree block");
        auto tk = detail::tokens(line);
        if (tk.size() != 4 || tk[0] != "tree" || r.integer<std::size_t>(tk[1]) != k)
            r.fail("expected 'tree " + std::to_string(k) + " nodes=<a> leaves=<b>'");
        const auto n_nodes = detail::keyed_count(r, tk[2], "nodes");
        const auto n_leaves = detail::keyed_count(r, tk[3], "leaves");
        if (n_leaves != n_nodes + 1) r.fail("a binary tree needs exactly one more leaf than nodes");
        auto& t = m.trees[k];
        std::vector<int> node_refs(n_nodes, 0), leaf_refs(n_leaves, 0);
        for (std::size_t i = 0; i < n_nodes; ++i) {
            line = r.next("node line");
            auto nt = detail::tokens(line);
            if (nt.size() != 7 || nt[0] != "node" || r.integer<std::size_t>(nt[1]) != i)
                r.fail("expected 'node " + std::to_string(i) + " <feature> <threshold> <left> <right> <gain>'");
            SplitNode nd;
            nd.feature = r.integer<int>(nt[2]);
            nd.threshold = r.integer<int>(nt[3]);
            nd.left = r.integer<int>(nt[4]);
            nd.right = r.integer<int>(nt[5]);
            nd.gain = r.real(nt[6]);
            if (nd.feature < 0 || static_cast<std::size_t>(nd.feature) >= n_features) r.fail("feature out of range");
            if (nd.threshold < 0 ||
                static_cast<std::size_t>(nd.threshold) >= m.edges.n_bins(static_cast<std::size_t>(nd.feature)))
                r.fail("threshold out of range");
            for (int child : {nd.left, nd.right}) {
                if (Tree::is_leaf(child)) {
                    if (Tree::leaf_index(child) >= n_leaves) r.fail("child leaf does not exist");
                    ++leaf_refs[Tree::leaf_index(child)];
                } else {
                    if (static_cast<std::size_t>(child) >= n_nodes || child <= static_cast<int>(i))
                        r.fail("child node does not exist");
                    ++node_refs[static_cast<std::size_t>(child)];
                }
            }
            t.nodes.push_back(nd);
        }
        for (std::size_t i = 0; i < n_leaves; ++i) {
            line = r.next("leaf line");
            auto lt = detail::tokens(line);
            if (lt.size() != 5 || lt[0] != "leaf" || r.integer<std::size_t>(lt[1]) != i)
                r.fail("expected 'leaf " + std::to_string(i) + " <mu> <var> <n>'");
            LeafStats lf;
            lf.mu = r.real(lt[2]);
            lf.var = r.real(lt[3]);
            lf.n = r.integer<std::size_t>(lt[4]);
            if (lf.var < 0.0) r.fail("negative leaf variance");
            t.leaves.push_back(lf);
        }
        for (std::size_t i = 1; i < n_nodes; ++i)
            if (node_refs[i] != 1) r.fail("tree " + std::to_string(k) + " is not a tree: node " + std::to_string(i));
        for (std::size_t i = 0; i < n_leaves; ++i)
            if (leaf_refs[i] != (n_nodes == 0 ? 0 : 1))
                r.fail("tree " + std::to_string(k) + " is not a tree: leaf " + std::to_string(i));
    }
    std::string trailing;
    while (std::getline(in, trailing))
        if (!trim(trailing).empty()) detail::ModelReader::fail(r.line() + 1, "trailing content after last tree");
    return m;
}

inline Ensemble load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::io_error, "cannot open " + path);
    return read_model(in);
}

} // namespace pgbm
