#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace mgsim {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// --- network construction ---
class DuplicateNodeError : public Error { public: using Error::Error; };
class UnknownEndpointError : public Error { public: using Error::Error; };
class UnknownNodeError : public Error { public: using Error::Error; };
class NonpositiveSusceptanceError : public Error { public: using Error::Error; };

class DisconnectedGraphError : public Error {
public:
    DisconnectedGraphError(std::string msg, std::vector<int> isolated)
        : Error(std::move(msg)), isolated_nodes(std::move(isolated)) {}
    /// Node ids with no incident line (empty if the graph splits into
    /// larger components instead).
    std::vector<int> isolated_nodes;
};

// --- plant / parameters ---
class NonpositiveVoltageError : public Error { public: using Error::Error; };
class NonpositiveParameterError : public Error { public: using Error::Error; };
class ZeroFrequencyError : public Error { public: using Error::Error; };
class SizeMismatchError : public Error { public: using Error::Error; };

// --- numerical solvers ---
class SingularJacobianError : public Error { public: using Error::Error; };
class NoConvergenceError : public Error { public: using Error::Error; };
class AlgebraicSolveFailedError : public Error { public: using Error::Error; };
class StepRejectedError : public Error { public: using Error::Error; };

// --- scenario / IO ---
class ParseError : public Error {
public:
    ParseError(std::string msg, int line_no) : Error(std::move(msg)), line(line_no) {}
    int line;
};
class SchemaError : public Error {
public:
    SchemaError(std::string msg, std::string field_name)
        : Error(std::move(msg)), field(std::move(field_name)) {}
    std::string field;
};
class ValidationError : public Error { public: using Error::Error; };
class IoError : public Error { public: using Error::Error; };
class PropositionViolatedError : public Error { public: using Error::Error; };

} // namespace mgsim
