#pragma once

#include <stdexcept>
#include <string>

namespace kspd {

/// Base of every error thrown by the library. The message is always prefixed
/// with the module that raised it ("linalg: ...", "kernel: ...").
class Error : public std::runtime_error {
 public:
  Error(const std::string& module, const std::string& what)
      : std::runtime_error(module + ": " + what), module_(module) {}

  const std::string& module() const noexcept { return module_; }

 private:
  std::string module_;
};

#define KSPD_DEFINE_ERROR(Name)                              \
  class Name : public Error {                                \
   public:                                                   \
    using Error::Error;                                      \
  }

KSPD_DEFINE_ERROR(DimensionError);
KSPD_DEFINE_ERROR(InputError);
KSPD_DEFINE_ERROR(ParameterError);
KSPD_DEFINE_ERROR(ConvergenceError);
KSPD_DEFINE_ERROR(DomainError);
KSPD_DEFINE_ERROR(UsageError);
KSPD_DEFINE_ERROR(FormatError);
KSPD_DEFINE_ERROR(TrainingError);
KSPD_DEFINE_ERROR(OracleError);

#undef KSPD_DEFINE_ERROR

}  // namespace kspd
