#pragma once
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "util.hpp"

namespace pgbm {

using BinIndex = std::uint16_t;
inline constexpr int kMaxSupportedBins = 65536;

/// Dense numeric table: features are stored row-major, target separately.
struct RawDataset {
    std::vector<double> features;  // n_samples * n_features, row-major
    std::vector<double> target;    // n_samples, or empty for unlabeled data
    std::vector<std::string> feature_names;
    std::string target_name;
    std::size_t n_samples = 0;
    std::size_t n_features = 0;

    double at(std::size_t row, std::size_t col) const { return features[row * n_features + col]; }

    std::span<const double> row(std::size_t r) const {
        return {features.data() + r * n_features, n_features};
    }

    std::vector<double> column(std::size_t c) const {
        std::vector<double> out(n_samples);
        for (std::size_t r = 0; r < n_samples; ++r) out[r] = at(r, c);
        return out;
    }

    bool has_target() const { return !target.empty(); }

    /// Rows `idx` in the given order.
    RawDataset subset(std::span<const std::size_t> idx) const {
        RawDataset out;
        out.n_samples = idx.size();
        out.n_features = n_features;
        out.feature_names = feature_names;
        out.target_name = target_name;
        out.features.reserve(idx.size() * n_features);
        for (auto r : idx) {
            auto src = row(r);
            out.features.insert(out.features.end(), src.begin(), src.end());
            if (has_target()) out.target.push_back(target[r]);
        }
        return out;
    }
};

/// Per-feature sorted upper edges. A value v falls into bin
/// `#{edges < v}`, so there are edges.size() + 1 bins per feature.
struct BinEdges {
    std::vector<std::vector<double>> edges;

    std::size_t n_features() const { return edges.size(); }
    std::size_t n_bins(std::size_t feature) const { return edges[feature].size() + 1; }

    bool operator==(const BinEdges&) const = default;
};

/// Feature matrix quantized against a BinEdges table; bins are stored
/// column-major because histogram construction scans one feature at a time.
struct BinnedDataset {
    std::vector<std::vector<BinIndex>> bins;  // [feature][sample]
    BinEdges edges;
    std::vector<double> target;
    std::size_t n_samples = 0;
    std::size_t n_features = 0;

    BinIndex bin(std::size_t sample, std::size_t feature) const { return bins[feature][sample]; }
};

namespace detail {

inline void check_finite(double v, std::size_t row, std::size_t col) {
    if (!std::isfinite(v))
        throw Error(Errc::non_finite_value,
                    "row " + std::to_string(row) + ", column " + std::to_string(col));
}

inline std::string unquote(std::string_view s) {
    s = trim(s);
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
    return std::string(s);
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
};

// Rows and columns in error messages are 1-based data rows / 0-based columns.
inline CsvTable read_numeric_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::io_error, "cannot open " + path);
    CsvTable t;
    std::string line;
    if (!std::getline(in, line)) throw Error(Errc::empty_dataset, path + " has no header row");
    if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // BOM
    for (auto cell : split(trim(line), ',')) t.header.push_back(unquote(cell));
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        ++row;
        auto cells = split(trim(line), ',');
        if (cells.size() != t.header.size())
            throw Error(Errc::parse_error, "row " + std::to_string(row) + ": expected " +
                                               std::to_string(t.header.size()) + " cells, got " +
                                               std::to_string(cells.size()));
        std::vector<double> values(cells.size());
        for (std::size_t c = 0; c < cells.size(); ++c) {
            auto v = parse_double(cells[c]);
            if (!v)
                throw Error(Errc::parse_error,
                            "row " + std::to_string(row) + ", column " + std::to_string(c) + ": '" +
                                std::string(trim(cells[c])) + "'");
            check_finite(*v, row, c);
            values[c] = *v;
        }
        t.rows.push_back(std::move(values));
    }
    if (t.rows.empty()) throw Error(Errc::empty_dataset, path + " has no data rows");
    return t;
}

inline std::size_t find_column(const std::vector<std::string>& header, const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw Error(Errc::missing_column, "column '" + name + "' not found");
    return static_cast<std::size_t>(it - header.begin());
}

} // namespace detail

/// Reads a headed, comma-delimited numeric CSV; `target_column` becomes the
/// target and the remaining columns the features, in file order.
inline RawDataset load_csv(const std::string& path, const std::string& target_column) {
    auto table = detail::read_numeric_csv(path);
    const auto tcol = detail::find_column(table.header, target_column);
    if (table.header.size() < 2) throw Error(Errc::empty_dataset, path + " has no feature columns");

    RawDataset ds;
    ds.n_samples = table.rows.size();
    ds.n_features = table.header.size() - 1;
    ds.target_name = target_column;
    for (std::size_t c = 0; c < table.header.size(); ++c)
        if (c != tcol) ds.feature_names.push_back(table.header[c]);
    ds.features.reserve(ds.n_samples * ds.n_features);
    ds.target.reserve(ds.n_samples);
    for (auto& row : table.rows) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            if (c == tcol)
                ds.target.push_back(row[c]);
            else
                ds.features.push_back(row[c]);
        }
    }
    return ds;
}

/// Loads the named feature columns (in the given order) for prediction. The
/// target column is attached when present and otherwise left empty. Any
/// column that is neither a listed feature nor the target is a mismatch.
inline RawDataset load_csv_for_model(const std::string& path,
                                     const std::vector<std::string>& feature_names,
                                     const std::string& target_column) {
    auto table = detail::read_numeric_csv(path);
    std::optional<std::size_t> tcol;
    if (auto it = std::find(table.header.begin(), table.header.end(), target_column);
        !target_column.empty() && it != table.header.end())
        tcol = static_cast<std::size_t>(it - table.header.begin());

    const std::size_t n_cols_expected = feature_names.size() + (tcol ? 1 : 0);
    if (table.header.size() != n_cols_expected)
        throw Error(Errc::feature_count_mismatch,
                    path + ": model expects " + std::to_string(feature_names.size()) +
                        " features, file has " +
                        std::to_string(table.header.size() - (tcol ? 1 : 0)));
    std::vector<std::size_t> cols;
    for (auto& name : feature_names) {
        auto it = std::find(table.header.begin(), table.header.end(), name);
        if (it == table.header.end())
            throw Error(Errc::feature_count_mismatch, path + ": feature '" + name + "' missing");
        cols.push_back(static_cast<std::size_t>(it - table.header.begin()));
    }

    RawDataset ds;
    ds.n_samples = table.rows.size();
    ds.n_features = feature_names.size();
    ds.feature_names = feature_names;
    if (tcol) ds.target_name = target_column;
    ds.features.reserve(ds.n_samples * ds.n_features);
    for (auto& row : table.rows) {
        for (auto c : cols) ds.features.push_back(row[c]);
        if (tcol) ds.target.push_back(row[*tcol]);
    }
    return ds;
}

/// Reads one numeric column from a headed CSV.
inline std::vector<double> load_csv_column(const std::string& path, const std::string& column) {
    auto table = detail::read_numeric_csv(path);
    const auto c = detail::find_column(table.header, column);
    std::vector<double> out;
    out.reserve(table.rows.size());
    for (auto& row : table.rows) out.push_back(row[c]);
    return out;
}

/// Equal-density edges for one feature. Features with at most `max_bins`
/// distinct values get one bin per value; otherwise edges sit at the lower
/// empirical quantiles k/max_bins (sorted index ceil(q*n)-1), deduplicated.
/// Edges equal to the feature maximum are dropped so no training bin is empty.
inline std::vector<double> compute_feature_edges(std::vector<double> values, int max_bins) {
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    std::vector<double> edges;
    if (n == 0) return edges;
    const double vmax = values.back();

    std::vector<double> distinct;
    std::unique_copy(values.begin(), values.end(), std::back_inserter(distinct));
    if (distinct.size() <= static_cast<std::size_t>(max_bins)) {
        edges.assign(distinct.begin(), distinct.end() - 1);
        return edges;
    }
    for (int k = 1; k < max_bins; ++k) {
        const double q = static_cast<double>(k) / max_bins;
        auto idx = static_cast<std::ptrdiff_t>(std::ceil(q * static_cast<double>(n))) - 1;
        idx = std::clamp<std::ptrdiff_t>(idx, 0, static_cast<std::ptrdiff_t>(n) - 1);
        const double v = values[static_cast<std::size_t>(idx)];
        if (v >= vmax) break;
        if (edges.empty() || v > edges.back()) edges.push_back(v);
    }
    return edges;
}

inline BinEdges compute_bin_edges(const RawDataset& data, int max_bins, int n_threads = 1) {
    if (max_bins < 2 || max_bins > kMaxSupportedBins)
        throw Error(Errc::invalid_config, "max_bins must be in [2, 65536], got " + std::to_string(max_bins));
    BinEdges out;
    out.edges.resize(data.n_features);
    parallel_for(
        data.n_features, n_threads,
        [&](std::size_t b, std::size_t e) {
            for (std::size_t f = b; f < e; ++f) out.edges[f] = compute_feature_edges(data.column(f), max_bins);
        },
        data.n_samples);
    return out;
}

/// Number of edges strictly below v; ties fall into the lower bin and values
/// outside the training range clamp to the first or last bin.
inline BinIndex bin_value(std::span<const double> edges, double v) {
    return static_cast<BinIndex>(std::lower_bound(edges.begin(), edges.end(), v) - edges.begin());
}

inline BinnedDataset apply_bins(const RawDataset& data, const BinEdges& edges, int n_threads = 1) {
    if (data.n_features != edges.n_features())
        throw Error(Errc::feature_count_mismatch,
                    "data has " + std::to_string(data.n_features) + " features, edges cover " +
                        std::to_string(edges.n_features()));
    BinnedDataset out;
    out.n_samples = data.n_samples;
    out.n_features = data.n_features;
    out.edges = edges;
    out.target = data.target;
    out.bins.assign(data.n_features, std::vector<BinIndex>(data.n_samples));
    parallel_for(
        data.n_features, n_threads,
        [&](std::size_t b, std::size_t e) {
            for (std::size_t f = b; f < e; ++f) {
                const auto& ef = edges.edges[f];
                auto& col = out.bins[f];
                for (std::size_t i = 0; i < data.n_samples; ++i) col[i] = bin_value(ef, data.at(i, f));
            }
        },
        data.n_samples);
    return out;
}

} // namespace pgbm
