// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace tensorize {

/// Caller supplied an invalid shape, permutation, scheme, or option.
class ArgumentError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A numerical routine failed (non-convergence, non-finite values).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed external data: checkpoint files, manifests, plans.
class DataError : public std::runtime_error {
public:
    enum class Kind {
        io,
        truncated_file,
        malformed_json,
        offset_overlap,
        offset_overflow,
        unknown_dtype,
        name_collision,
        missing_tensor,
        schema,
    };

    DataError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    [[nodiscard]] Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

const char* to_string(DataError::Kind kind) noexcept;

} // namespace tensorize
