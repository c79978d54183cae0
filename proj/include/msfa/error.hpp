// Copyright Contributors to the msfa-forge project.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace msfa {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed file header or payload.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Operands whose shapes, band counts or identities do not agree.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Block or pixel index outside the (padded) image.
class IndexError : public Error {
public:
    using Error::Error;
};

/// A value violates a domain invariant (range, ordering, emptiness).
class ValueError : public Error {
public:
    using Error::Error;
};

/// The Wiener normal system could not be factorized.
class SingularSystemError : public Error {
public:
    using Error::Error;
};

/// NaN or infinity produced during an iterative computation.
class NumericError : public Error {
public:
    using Error::Error;
};

}  // namespace msfa
