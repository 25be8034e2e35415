#include "crownpipe/error.hpp"

#include <sstream>

namespace crownpipe {

UnknownSegmentError::UnknownSegmentError(long long id)
    : std::out_of_range("unknown segment id " + std::to_string(id)), id_(id) {}

namespace {

std::string unlabeled_message(const std::vector<long long>& ids) {
  std::ostringstream os;
  os << ids.size() << " segment(s) unlabeled:";
  for (auto id : ids) os << ' ' << id;
  return os.str();
}

}  // namespace

UnlabeledSegmentsError::UnlabeledSegmentsError(std::vector<long long> ids)
    : std::runtime_error(unlabeled_message(ids)), ids_(std::move(ids)) {}

}  // namespace crownpipe
