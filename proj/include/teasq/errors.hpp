#pragma once

#include <stdexcept>
#include <string>

namespace teasq {

// Caller broke a documented precondition (shape mismatch, h > t, ...).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Invalid experiment or codec configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A compressed payload that cannot be decoded.
class CorruptPayload : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Server-side protocol misuse, e.g. an upload with no task in flight.
class ProtocolViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed dataset file. `offset` is the byte position where parsing failed.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class PartitionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A device holds no data and cannot train.
class EmptyDataset : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace teasq
