#pragma once

#include <stdexcept>
#include <string>

namespace dvm {

/// Base of every error raised by the library. `kind()` names the failure
/// class so callers (and the CLI) can map it to exit codes without RTTI games.
class Error : public std::runtime_error {
public:
  Error(std::string kind, const std::string &what)
      : std::runtime_error(kind + ": " + what), kind_(std::move(kind)) {}
  const std::string &kind() const noexcept { return kind_; }

private:
  std::string kind_;
};

#define DVM_DEFINE_ERROR(Name)                                                 \
  class Name : public Error {                                                  \
  public:                                                                      \
    explicit Name(const std::string &what) : Error(#Name, what) {}             \
  }

DVM_DEFINE_ERROR(InvalidArgument);
DVM_DEFINE_ERROR(ParseError);
DVM_DEFINE_ERROR(PointOutsideDomain);
DVM_DEFINE_ERROR(NoConvergence);
DVM_DEFINE_ERROR(DegenerateBoundary);
DVM_DEFINE_ERROR(SegmentLeavesDomain);
DVM_DEFINE_ERROR(AlphaTooSmall);
DVM_DEFINE_ERROR(NonfiniteValue);
DVM_DEFINE_ERROR(InvariantViolation);
DVM_DEFINE_ERROR(MetadataMismatch);

#undef DVM_DEFINE_ERROR

} // namespace dvm
