#pragma once

#include <stdexcept>
#include <string>

namespace tdlab {

// Base of every error raised by the library. The CLI maps ConfigError to
// exit code 2; everything else surfacing from a single cell is recorded in
// the sweep output instead of aborting the run.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "error"; }
};

#define TDLAB_DEFINE_ERROR(Name, tag)                    \
  class Name : public Error {                            \
   public:                                               \
    using Error::Error;                                  \
    const char* kind() const noexcept override { return tag; } \
  };

TDLAB_DEFINE_ERROR(ConfigError, "config")
TDLAB_DEFINE_ERROR(MomentEvaluationError, "moment-evaluation")
TDLAB_DEFINE_ERROR(DegenerateActivationError, "degenerate-activation")
TDLAB_DEFINE_ERROR(FeatureEvaluationError, "feature-evaluation")
TDLAB_DEFINE_ERROR(InputError, "input")
TDLAB_DEFINE_ERROR(NumericError, "numeric")
TDLAB_DEFINE_ERROR(BranchSelectionError, "branch-selection")
TDLAB_DEFINE_ERROR(SpectrumInconsistencyError, "spectrum-inconsistency")
TDLAB_DEFINE_ERROR(InsufficientReplicatesError, "insufficient-replicates")
TDLAB_DEFINE_ERROR(InsufficientGridError, "insufficient-grid")
TDLAB_DEFINE_ERROR(DegenerateTeacherError, "degenerate-teacher")
TDLAB_DEFINE_ERROR(FormatError, "format")
TDLAB_DEFINE_ERROR(ConsistencyError, "consistency")
TDLAB_DEFINE_ERROR(ZeroVarianceError, "zero-variance")

#undef TDLAB_DEFINE_ERROR

}  // namespace tdlab
