#include "opom/error.hpp"

namespace opom {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidInput: return "invalid-input";
    case ErrorCode::InternalError: return "internal-error";
    case ErrorCode::MalformedHeader: return "malformed-header";
    case ErrorCode::TruncatedPayload: return "truncated-payload";
    case ErrorCode::KindMismatch: return "kind-mismatch";
    case ErrorCode::ShapeMismatch: return "shape-mismatch";
    case ErrorCode::IntegrityError: return "integrity-error";
    case ErrorCode::IoError: return "io-error";
  }
  return "unknown";
}

}  // namespace opom
