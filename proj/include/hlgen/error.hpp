#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hlgen {

// Coarse failure classes; the CLI prints the category name so that scripts
// can branch on it.
enum class ErrorKind {
  kUsage,
  kInput,
  kData,
  kMissingArtifact,
  kCheckpoint,
  kDivergence,
  kInternal,
};

std::string_view error_kind_name(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace hlgen
