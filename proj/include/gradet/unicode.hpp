#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace gradet::unicode {

/// Decodes UTF-8. Throws FormatError on malformed input.
std::u32string to_u32(std::string_view utf8);
std::string to_utf8(std::u32string_view text);
std::string to_utf8(char32_t cp);

/// Canonical composition (NFC).
std::string nfc(std::string_view utf8);

bool is_whitespace(char32_t cp);

/// Maximal runs of non-whitespace codepoints.
std::vector<std::u32string> split_words(std::u32string_view text);

bool is_valid_utf8(std::string_view bytes);

}  // namespace gradet::unicode
