#include "noiserank/tokenizer.hpp"

namespace noiserank {
namespace {

bool is_token_byte(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c >= 0x80;
}

char fold(unsigned char c) {
  return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : static_cast<char>(c);
}

template <typename Sink>
void split(std::string_view text, Sink&& sink) {
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && !is_token_byte(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t start = i;
    while (i < text.size() && is_token_byte(static_cast<unsigned char>(text[i]))) ++i;
    if (i > start) sink(text.substr(start, i - start));
  }
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  split(text, [&](std::string_view tok) {
    std::string t;
    t.reserve(tok.size());
    for (unsigned char c : tok) t.push_back(fold(c));
    out.push_back(std::move(t));
  });
  return out;
}

std::size_t count_tokens(std::string_view text) {
  std::size_t n = 0;
  split(text, [&](std::string_view) { ++n; });
  return n;
}

}  // namespace noiserank
