#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace adpo {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

// Base of every error thrown by the library. Subclasses let callers map
// failures to exit codes without string matching.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

class OutOfVocabulary : public Error {
public:
    using Error::Error;
};

class SchemaError : public Error {
public:
    using Error::Error;
};

class UnknownContext : public Error {
public:
    using Error::Error;
};

class FrozenPolicyError : public Error {
public:
    using Error::Error;
};

class NonFiniteError : public Error {
public:
    using Error::Error;
};

class EmptyDataset : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

} // namespace adpo
