#pragma once

#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace slyk {

/// Violated precondition of a library call (bad shape, non-unit vector, ...).
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Non-finite or otherwise out-of-domain numeric input.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Invalid run configuration. Carries every violated constraint, not just the first.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> violations)
      : std::runtime_error(join(violations)), violations_(std::move(violations)) {}
  explicit ConfigError(const std::string& violation) : ConfigError(std::vector<std::string>{violation}) {}

  const std::vector<std::string>& violations() const noexcept { return violations_; }

 private:
  static std::string join(const std::vector<std::string>& v) {
    std::ostringstream os;
    os << "invalid configuration (" << v.size() << " problem" << (v.size() == 1 ? "" : "s") << ")";
    for (const auto& s : v) os << "\n  - " << s;
    return os.str();
  }
  std::vector<std::string> violations_;
};

/// Dataset loading / decoding failures. Itemized like ConfigError.
class DataError : public std::runtime_error {
 public:
  explicit DataError(std::vector<std::string> items)
      : std::runtime_error(join(items)), items_(std::move(items)) {}
  explicit DataError(const std::string& item) : DataError(std::vector<std::string>{item}) {}

  const std::vector<std::string>& items() const noexcept { return items_; }

 private:
  static std::string join(const std::vector<std::string>& v) {
    std::ostringstream os;
    os << "dataset error";
    for (const auto& s : v) os << "\n  - " << s;
    return os.str();
  }
  std::vector<std::string> items_;
};

/// Training aborted (non-finite loss and similar).
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace slyk

#define SLYK_EXPECT(cond, msg)                                   \
  do {                                                           \
    if (!(cond)) {                                               \
      std::ostringstream slyk_expect_os_;                        \
      slyk_expect_os_ << msg;                                    \
      throw ::slyk::ContractError(slyk_expect_os_.str());        \
    }                                                            \
  } while (false)
