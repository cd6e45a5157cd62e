#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace patchguard {

// Raised when a caller breaks an operation's precondition (bad shape,
// out-of-range class, window outside the grid, ...).
class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed dataset or checkpoint bytes. `offset` is the byte position at
// which parsing failed.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class TrainingDiverged : public std::runtime_error {
 public:
  explicit TrainingDiverged(std::size_t epoch)
      : std::runtime_error("training diverged (non-finite loss) in epoch " +
                           std::to_string(epoch)),
        epoch_(epoch) {}
  std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t epoch_;
};

class AttackDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The oracle refuses scenarios whose exhaustive enumeration would exceed the
// configured evaluation budget.
class BudgetExceeded : public std::runtime_error {
 public:
  BudgetExceeded(std::uint64_t required, std::uint64_t budget)
      : std::runtime_error("oracle enumeration needs " + std::to_string(required) +
                           " evaluations, budget is " + std::to_string(budget)),
        required_(required) {}
  std::uint64_t required() const noexcept { return required_; }

 private:
  std::uint64_t required_;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractViolation(msg);
}

}  // namespace patchguard
