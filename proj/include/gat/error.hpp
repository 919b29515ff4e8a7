#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gat {

class Error : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
   public:
    using Error::Error;
};

// Misuse of the differentiation graph: unbound leaves, non-scalar outputs,
// second-order requests on a first-order tape.
class GraphError : public Error {
   public:
    using Error::Error;
};

class ConfigError : public Error {
   public:
    using Error::Error;
};

// Non-finite values, degenerate gram matrices, diverging losses.
class NumericError : public Error {
   public:
    using Error::Error;
};

class IoError : public Error {
   public:
    using Error::Error;
};

class ParseError : public IoError {
   public:
    ParseError(const std::string& what, std::size_t offset)
        : IoError(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

   private:
    std::size_t offset_;
};

}  // namespace gat
