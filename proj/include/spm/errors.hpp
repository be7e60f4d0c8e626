#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace spm {

// Thrown when consecutive layers disagree about tensor shapes.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Thrown when a graph violates a structural requirement (e.g. a prunable
// conv without a following batch-norm, or a non-chain topology).
class StructureError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Model-file parse failure. Carries the byte offset of the first bad byte.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& msg, std::uint64_t offset)
      : std::runtime_error(msg + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

// A PrunePlan applied to a graph it was not computed for.
class PlanMismatchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A PrunePlan that violates its own invariants (out-of-range index,
// unsorted list, or no surviving channel).
class InvalidPlanError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace spm
