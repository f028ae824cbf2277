#include <cstdio>

#include "hlgen/error.hpp"
#include "hlgen/hash.hpp"

namespace hlgen {

std::string_view error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kUsage:
      return "usage";
    case ErrorKind::kInput:
      return "input";
    case ErrorKind::kData:
      return "data";
    case ErrorKind::kMissingArtifact:
      return "missing_artifact";
    case ErrorKind::kCheckpoint:
      return "checkpoint";
    case ErrorKind::kDivergence:
      return "divergence";
    case ErrorKind::kInternal:
      return "internal";
  }
  return "internal";
}

std::string hex64(uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

}  // namespace hlgen
