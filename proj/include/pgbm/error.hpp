#pragma once
#include <stdexcept>
#include <string>
#include <string_view>

namespace pgbm {

enum class Errc {
    // data
    missing_column,
    parse_error,
    non_finite_value,
    empty_dataset,
    feature_count_mismatch,
    length_mismatch,
    index_out_of_range,
    // numerics
    non_finite_loss,
    non_positive_hessian_denominator,
    degenerate_hessian,
    empty_mask,
    non_finite_estimate,
    infeasible_moments,
    empty_samples,
    // model files
    io_error,
    version_mismatch,
    corrupt_model,
    // configuration
    invalid_config,
};

inline std::string_view errc_name(Errc c) {
    switch (c) {
    case Errc::missing_column: return "MissingColumn";
    case Errc::parse_error: return "ParseError";
    case Errc::non_finite_value: return "NonFiniteValue";
    case Errc::empty_dataset: return "EmptyDataset";
    case Errc::feature_count_mismatch: return "FeatureCountMismatch";
    case Errc::length_mismatch: return "LengthMismatch";
    case Errc::index_out_of_range: return "IndexOutOfRange";
    case Errc::non_finite_loss: return "NonFiniteLoss";
    case Errc::non_positive_hessian_denominator: return "NonPositiveHessianDenominator";
    case Errc::degenerate_hessian: return "DegenerateHessian";
    case Errc::empty_mask: return "EmptyMask";
    case Errc::non_finite_estimate: return "NonFiniteEstimate";
    case Errc::infeasible_moments: return "InfeasibleMoments";
    case Errc::empty_samples: return "EmptySamples";
    case Errc::io_error: return "IoError";
    case Errc::version_mismatch: return "VersionMismatch";
    case Errc::corrupt_model: return "CorruptModel";
    case Errc::invalid_config: return "InvalidConfig";
    }
    return "Unknown";
}

/// Single exception type for the library; `code()` tells callers which
/// contract was violated.
class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

    Errc code() const noexcept { return code_; }

    /// True for errors caused by the input data or a model file rather than
    /// by the caller's configuration.
    bool is_data_error() const noexcept { return code_ != Errc::invalid_config; }

private:
    Errc code_;
};

} // namespace pgbm
