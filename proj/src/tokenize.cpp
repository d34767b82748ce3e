#include "lct/tokenize.hpp"

namespace lct {

namespace {

bool is_word(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' || c >= 0x80;
}

bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

template <typename Emit>
void scan(std::string_view text, Emit&& emit) {
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (is_space(c)) {
      ++i;
    } else if (is_word(c)) {
      const std::size_t start = i;
      while (i < text.size() && is_word(static_cast<unsigned char>(text[i]))) ++i;
      emit(text.substr(start, i - start));
    } else {
      emit(text.substr(i++, 1));
    }
  }
}

}  // namespace

std::vector<std::string_view> word_punct_tokens(std::string_view text) {
  std::vector<std::string_view> out;
  scan(text, [&out](std::string_view t) { out.push_back(t); });
  return out;
}

std::size_t word_punct_count(std::string_view text) {
  std::size_t n = 0;
  scan(text, [&n](std::string_view) { ++n; });
  return n;
}

}  // namespace lct
