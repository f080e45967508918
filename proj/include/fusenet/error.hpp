#pragma once

#include <stdexcept>
#include <string>

namespace fusenet {

/// Base class for every error raised by the library. `kind()` names the
/// failure category (e.g. "ShapeMismatch") so callers and the CLI can
/// report it without RTTI.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(kind + ": " + what), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define FUSENET_DEFINE_ERROR(Name)                                 \
  class Name : public Error {                                      \
   public:                                                         \
    explicit Name(const std::string& what) : Error(#Name, what) {} \
  }

FUSENET_DEFINE_ERROR(ShapeMismatch);
FUSENET_DEFINE_ERROR(NotScalar);
FUSENET_DEFINE_ERROR(DegenerateOutput);
FUSENET_DEFINE_ERROR(UnknownVariant);
FUSENET_DEFINE_ERROR(InvalidCoefficients);
FUSENET_DEFINE_ERROR(SpecInvalid);
FUSENET_DEFINE_ERROR(BatchMismatch);
FUSENET_DEFINE_ERROR(MalformedImage);
FUSENET_DEFINE_ERROR(EmptyClass);
FUSENET_DEFINE_ERROR(ClassTooSmall);
FUSENET_DEFINE_ERROR(UnsupportedAngle);
FUSENET_DEFINE_ERROR(InvalidArgument);
FUSENET_DEFINE_ERROR(EmptyMatrix);
FUSENET_DEFINE_ERROR(NoPositives);
FUSENET_DEFINE_ERROR(NoPredictedPositives);
FUSENET_DEFINE_ERROR(UndefinedF1);
FUSENET_DEFINE_ERROR(MalformedReport);
FUSENET_DEFINE_ERROR(MalformedConfig);
FUSENET_DEFINE_ERROR(IoError);

#undef FUSENET_DEFINE_ERROR

}  // namespace fusenet
