#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace crownpipe {

// File could not be opened, parsed or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An input violated an operation's precondition.
class PreconditionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Lookup of a segment id that does not exist in the map.
class UnknownSegmentError : public std::out_of_range {
 public:
  explicit UnknownSegmentError(long long id);
  long long id() const noexcept { return id_; }

 private:
  long long id_;
};

// Ground-truth export was attempted while some segments carry no label.
class UnlabeledSegmentsError : public std::runtime_error {
 public:
  explicit UnlabeledSegmentsError(std::vector<long long> ids);
  const std::vector<long long>& ids() const noexcept { return ids_; }

 private:
  std::vector<long long> ids_;
};

}  // namespace crownpipe
