#pragma once

#include <stdexcept>
#include <string>

namespace pdcn {

/// Root of every error raised by the library. Subclasses name the failing
/// surface so callers can map them to exit codes or messages.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define PDCN_DEFINE_ERROR(Name)          \
  class Name : public Error {            \
   public:                               \
    using Error::Error;                  \
  };

PDCN_DEFINE_ERROR(ShapeError)
PDCN_DEFINE_ERROR(NumericError)
PDCN_DEFINE_ERROR(StateError)
PDCN_DEFINE_ERROR(ConfigError)
PDCN_DEFINE_ERROR(OptimizerError)
PDCN_DEFINE_ERROR(LabelError)
PDCN_DEFINE_ERROR(DataError)
PDCN_DEFINE_ERROR(FormatError)
PDCN_DEFINE_ERROR(LoadError)
PDCN_DEFINE_ERROR(IngestError)
PDCN_DEFINE_ERROR(CropError)
PDCN_DEFINE_ERROR(SplitError)
PDCN_DEFINE_ERROR(BalanceError)
PDCN_DEFINE_ERROR(ParseError)
PDCN_DEFINE_ERROR(MetricError)
PDCN_DEFINE_ERROR(ImageError)

#undef PDCN_DEFINE_ERROR

}  // namespace pdcn
