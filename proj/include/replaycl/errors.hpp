#pragma once

#include <stdexcept>
#include <string>

namespace replaycl {

// Base class for everything thrown by this library.
class error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A file could not be opened or read.
class io_error : public error {
public:
    using error::error;
};

// A file was readable but its contents do not conform to the expected format.
class format_error : public error {
public:
    using error::error;
};

// Invalid configuration (bad strategy name, inconsistent class counts, ...).
class config_error : public error {
public:
    using error::error;
};

// An API precondition was violated (shape mismatch, label out of range, ...).
class contract_error : public error {
public:
    using error::error;
};

// Non-finite values where finite ones are required, or training divergence.
class numeric_error : public error {
public:
    using error::error;
};

// A persisted artifact fails its structural invariants on restore.
class integrity_error : public error {
public:
    using error::error;
};

}  // namespace replaycl
