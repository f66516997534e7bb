#pragma once

#include <stdexcept>
#include <string>

namespace mcontrib {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid occlusion plan, patch grid or mask request.
class PlanError : public Error {
 public:
  using Error::Error;
};

/// Manifest, sample file or container problems.
class DatasetError : public Error {
 public:
  using Error::Error;
};

/// Any failure on the model side of the boundary. `batch_index` is the
/// position of the failing request inside a batch, or -1 when unknown.
class ModelError : public Error {
 public:
  explicit ModelError(const std::string& what, long batch_index = -1) : Error(what), batch_index_(batch_index) {}

  long batch_index() const { return batch_index_; }

 private:
  long batch_index_;
};

/// The model could not be reached, the pipe broke or a call timed out.
class TransportError : public ModelError {
 public:
  using ModelError::ModelError;
};

class TimeoutError : public TransportError {
 public:
  using TransportError::TransportError;
};

/// A response that does not parse or does not follow the wire protocol.
class MalformedResponseError : public ModelError {
 public:
  using ModelError::ModelError;
};

/// Output length differs from the one discovered on the first call.
class OutputLengthError : public ModelError {
 public:
  using ModelError::ModelError;
};

class NonFiniteOutputError : public ModelError {
 public:
  using ModelError::ModelError;
};

/// The model answered a request with an explicit error message.
class RemoteModelError : public ModelError {
 public:
  using ModelError::ModelError;
};

/// Handshake rejected: wrong protocol version or missing metadata.
class ProtocolError : public ModelError {
 public:
  using ModelError::ModelError;
};

/// Repeating the baseline call produced a different output.
class NondeterminismError : public ModelError {
 public:
  using ModelError::ModelError;
};

namespace detail {

// Truncates a payload for inclusion in an error message.
inline std::string excerpt(const std::string& payload, std::size_t limit = 160) {
  if (payload.size() <= limit) return payload;
  return payload.substr(0, limit) + "...";
}

}  // namespace detail
}  // namespace mcontrib
