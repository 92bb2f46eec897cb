#ifndef STIN_ERROR_HPP_
#define STIN_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace stin {

// Base of every exception thrown by the library. `kind()` is a stable
// machine-readable tag used by the CLI error line.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define STIN_DEFINE_ERROR(Name, tag)                                   \
  class Name : public Error {                                          \
   public:                                                             \
    explicit Name(const std::string& what) : Error(tag, what) {}      \
  };

STIN_DEFINE_ERROR(DomainError, "domain")
STIN_DEFINE_ERROR(UnreachableError, "unreachable")
STIN_DEFINE_ERROR(StructuralError, "structural")
STIN_DEFINE_ERROR(InvalidMatrixError, "invalid_matrix")
STIN_DEFINE_ERROR(InstanceTooLargeError, "instance_too_large")
STIN_DEFINE_ERROR(ShapeError, "shape")
STIN_DEFINE_ERROR(DivergenceError, "divergence")
STIN_DEFINE_ERROR(MissingFileError, "missing_file")
STIN_DEFINE_ERROR(ParseError, "parse")
STIN_DEFINE_ERROR(RangeError, "range")
STIN_DEFINE_ERROR(UnknownKeyError, "unknown_key")
STIN_DEFINE_ERROR(ConfigError, "config")

#undef STIN_DEFINE_ERROR

}  // namespace stin

#endif  // STIN_ERROR_HPP_
