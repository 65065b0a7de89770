#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace noiserank {

// Lowercases ASCII letters and splits on runs of anything that is not an
// ASCII letter or digit. Bytes >= 0x80 are kept inside tokens so UTF-8 words
// stay whole. Empty tokens are never produced.
std::vector<std::string> tokenize(std::string_view text);

// Same split rule, counting only.
std::size_t count_tokens(std::string_view text);

}  // namespace noiserank
