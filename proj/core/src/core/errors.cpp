#include "end2/core/errors.hpp"

namespace end2 {

int exit_code(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Config:
      return 2;
    case ErrorKind::Data:
      return 3;
    case ErrorKind::NumericalAbort:
      return 4;
    default:
      return 1;
  }
}

}  // namespace end2
