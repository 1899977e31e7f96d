#pragma once

#include <stdexcept>
#include <string>

namespace entfact {

// Base of every error thrown by the library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid arguments, violated preconditions, malformed input files.
struct InputError : Error {
  using Error::Error;
};

// Failures while producing step scores (file lookups, remote calls).
struct ScorerError : Error {
  using Error::Error;
};

// The remote endpoint could not be reached or timed out, after retries.
struct TransportError : ScorerError {
  using ScorerError::ScorerError;
};

// The remote endpoint answered with a non-2xx status.
struct ServerError : ScorerError {
  ServerError(int status, const std::string& message)
      : ScorerError("server returned " + std::to_string(status) + ": " + message),
        status(status) {}
  int status;
};

// The remote endpoint answered 2xx but the body does not follow the protocol.
struct MalformedResponseError : ScorerError {
  using ScorerError::ScorerError;
};

// Non-finite values or divergence during optimisation.
struct TrainingError : Error {
  using Error::Error;
};

}  // namespace entfact
