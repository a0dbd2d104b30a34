#pragma once

#include <string>
#include <string_view>

namespace dejavu::text {

/// Unicode full case folding of a UTF-8 string.
std::string fold_case(std::string_view utf8);

/// Canonical caption key: NFC, case-fold, then runs of whitespace collapsed to
/// a single space with leading/trailing whitespace removed.
std::string caption_key(std::string_view utf8);

}  // namespace dejavu::text
