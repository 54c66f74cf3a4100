#pragma once

#include <stdexcept>
#include <string>

namespace shapflow {

// Malformed or inconsistent input data (files, headers, index ranges).
// The command line tool maps this to exit code 2.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Numerical breakdown: divergence, non-finite values, failed factorization.
// Mapped to exit code 3.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

// Collective misuse or communication failure between workers: mismatched
// call sequences, timeouts, closed peers.
class ProtocolError : public std::runtime_error {
 public:
  explicit ProtocolError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace shapflow
