#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

namespace lct {

/// Tokenizer-agnostic splitter: maximal runs of word characters ([A-Za-z0-9_]
/// and any byte >= 0x80, so UTF-8 letters stay inside words) and every other
/// non-whitespace character as a token of its own.
std::vector<std::string_view> word_punct_tokens(std::string_view text);

std::size_t word_punct_count(std::string_view text);

}  // namespace lct
