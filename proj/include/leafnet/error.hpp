#pragma once

#include <stdexcept>
#include <string>

namespace leafnet {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Incompatible shapes or geometry.
class DimensionError : public Error {
public:
    using Error::Error;
};

// Index or label outside its valid range.
class IndexError : public Error {
public:
    using Error::Error;
};

// Operation called in the wrong lifecycle state (e.g. backward before forward).
class StateError : public Error {
public:
    using Error::Error;
};

// Non-finite values in losses or gradients.
class NumericError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

// Malformed dataset file or corpus.
class DataError : public Error {
public:
    using Error::Error;
};

class ParseError : public DataError {
public:
    using DataError::DataError;
};

// Every learning-rate candidate diverged.
class SearchError : public Error {
public:
    using Error::Error;
};

// Training loss stayed non-finite across consecutive evaluations.
class DivergenceError : public Error {
public:
    using Error::Error;
};

class CheckpointError : public Error {
public:
    using Error::Error;
};

class CheckpointVersionError : public CheckpointError {
public:
    using CheckpointError::CheckpointError;
};

class CheckpointTruncatedError : public CheckpointError {
public:
    using CheckpointError::CheckpointError;
};

class CheckpointShapeError : public CheckpointError {
public:
    using CheckpointError::CheckpointError;
};

} // namespace leafnet
