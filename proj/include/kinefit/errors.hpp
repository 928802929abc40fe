#pragma once

#include <stdexcept>
#include <string>

namespace kinefit {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Skeleton definition violates a structural invariant.
class SkeletonError : public Error {
public:
    using Error::Error;
};

/// Pose dimensions do not match the skeleton, or a scale is non-positive.
class InvalidPoseError : public Error {
public:
    using Error::Error;
};

/// A named site, body, camera or coordinate does not exist.
class LookupError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed input file. The message names the file and line when known.
class ParseError : public Error {
public:
    using Error::Error;
};

class InsufficientViewsError : public Error {
public:
    using Error::Error;
};

class DegenerateConsensusError : public Error {
public:
    using Error::Error;
};

class AlignmentError : public Error {
public:
    using Error::Error;
};

class EvaluationError : public Error {
public:
    using Error::Error;
};

/// Non-finite loss or otherwise unusable solver input.
class SolveInputError : public Error {
public:
    using Error::Error;
};

/// Synthetic scene request that cannot be generated.
class SceneSpecError : public Error {
public:
    using Error::Error;
};

/// Correspondence discovery or refinement without usable data.
class NoDataError : public Error {
public:
    using Error::Error;
};

/// Correspondence table that is not a bijection or has invalid weights.
class CorrespondenceError : public Error {
public:
    using Error::Error;
};

}  // namespace kinefit
