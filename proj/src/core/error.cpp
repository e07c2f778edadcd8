#include "error.hpp"

namespace sprag {

const char* error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return "invalid_argument";
    case ErrorCode::Schema: return "schema";
    case ErrorCode::Row: return "row";
    case ErrorCode::Io: return "io";
    case ErrorCode::InsufficientData: return "insufficient_data";
    case ErrorCode::Transport: return "transport";
    case ErrorCode::Dimension: return "dimension";
    case ErrorCode::Normalization: return "normalization";
    case ErrorCode::UndefinedSimilarity: return "undefined_similarity";
    case ErrorCode::Generation: return "generation";
    case ErrorCode::Validation: return "validation";
    case ErrorCode::NotFound: return "not_found";
    case ErrorCode::NoSignal: return "no_signal";
    case ErrorCode::InsufficientPairs: return "insufficient_pairs";
    case ErrorCode::LengthMismatch: return "length_mismatch";
    case ErrorCode::IncompleteGrid: return "incomplete_grid";
    case ErrorCode::Config: return "config";
    case ErrorCode::Unavailable: return "unavailable";
    case ErrorCode::Locked: return "locked";
    case ErrorCode::Internal: return "internal";
  }
  return "unknown";
}

}  // namespace sprag
