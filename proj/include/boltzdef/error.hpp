#pragma once

#include <stdexcept>
#include <string>

namespace boltzdef {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed file contents (bad magic, unknown version).
class FormatError : public Error {
public:
    using Error::Error;
};

/// Two files or sections that must agree do not (e.g. image/label counts).
class InconsistencyError : public Error {
public:
    using Error::Error;
};

/// Missing, unreadable, truncated or unwritable file.
class IoError : public Error {
public:
    using Error::Error;
};

/// Vector or matrix shapes that do not fit together.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// An argument outside its documented domain.
class ArgumentError : public Error {
public:
    using Error::Error;
};

/// A request too large for an exact (enumeration based) computation.
class CapacityError : public Error {
public:
    using Error::Error;
};

/// Object used before it was put into a usable state.
class StateError : public Error {
public:
    using Error::Error;
};

/// Ising model whose couplings are not bipartite visible/hidden.
class StructureError : public Error {
public:
    using Error::Error;
};

/// Bad or unknown configuration key/value.
class ConfigError : public Error {
public:
    using Error::Error;
};

namespace detail {

inline void require_dim(bool ok, const std::string& what) {
    if (!ok) throw DimensionError(what);
}

inline void require_arg(bool ok, const std::string& what) {
    if (!ok) throw ArgumentError(what);
}

} // namespace detail
} // namespace boltzdef
