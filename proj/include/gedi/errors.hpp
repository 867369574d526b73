// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace gedi {

/// Base class for all errors raised by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Caller violated a contract: out-of-range ids, bad hyperparameter bounds,
/// empty batches, corpora too small to split. Maps to CLI exit code 1.
struct InvalidArgument : Error {
    using Error::Error;
};

/// Bad or inconsistent data: unparseable files, unknown format versions,
/// vocab mismatches between artifacts. Maps to CLI exit code 2.
struct DataError : Error {
    using Error::Error;
};

/// Numerical failure: non-finite intermediates, degenerate (all-zero)
/// distributions, training divergence. Maps to CLI exit code 3.
struct NumericError : Error {
    using Error::Error;
};

} // namespace gedi
