#include "w2t/error.hpp"

namespace w2t {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kEmptySlide: return "EmptySlide";
    case ErrorCode::kEmptyBag: return "EmptyBag";
    case ErrorCode::kFormatError: return "FormatError";
    case ErrorCode::kNonFiniteValue: return "NonFiniteValue";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kIndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::kNotScalar: return "NotScalar";
    case ErrorCode::kPrefixTooLong: return "PrefixTooLong";
    case ErrorCode::kNonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::kMissingBag: return "MissingBag";
    case ErrorCode::kEmptyDataset: return "EmptyDataset";
    case ErrorCode::kKeywordNotFound: return "KeywordNotFound";
    case ErrorCode::kKeywordMultiToken: return "KeywordMultiToken";
    case ErrorCode::kAlignmentMismatch: return "AlignmentMismatch";
    case ErrorCode::kNoTemplates: return "NoTemplates";
    case ErrorCode::kPromptError: return "PromptError";
    case ErrorCode::kNoValidBlocks: return "NoValidBlocks";
    case ErrorCode::kNoComparablePairs: return "NoComparablePairs";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kIoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace w2t
