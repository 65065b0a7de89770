#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>

#include "noiserank/retrieval.hpp"

namespace noiserank {

// Half-open token range [start, end) into the source document.
struct PassageSpan {
  std::size_t start = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - start; }
  bool operator==(const PassageSpan&) const = default;
};

enum PassageSlot : std::size_t { kHead = 0, kMiddle1 = 1, kMiddle2 = 2, kTail = 3 };
inline constexpr std::size_t kPassagesPerDocument = 4;

// Head, two interior windows and tail of one document.
struct PassageSet {
  std::array<TokenSequence, kPassagesPerDocument> passages;
  std::array<PassageSpan, kPassagesPerDocument> offsets;

  const TokenSequence& head() const { return passages[kHead]; }
  const TokenSequence& middle_1() const { return passages[kMiddle1]; }
  const TokenSequence& middle_2() const { return passages[kMiddle2]; }
  const TokenSequence& tail() const { return passages[kTail]; }
};

// Offsets only; the passages are slices of the document at these spans.
//
// With L tokens and window size W:
//   head = [0, min(L, W)), tail = [max(0, L - W), L).
//   The interior is [W, L - W). If it holds at least W tokens, each middle is
//   a W-token window whose start is drawn uniformly (and independently of the
//   other middle) from the interior, using a generator seeded from
//   (seed, doc_id). A shorter non-empty interior is used whole for both
//   middles. An empty interior makes middle_1 = head and middle_2 = tail, and
//   L <= W makes all four passages the whole document.
std::array<PassageSpan, kPassagesPerDocument> passage_offsets(std::size_t doc_length, std::size_t max_passage_len,
                                                              std::uint64_t seed, std::string_view doc_id);

// Throws ValidationError on an empty document or max_passage_len < 1.
PassageSet split_passages(std::span<const TermId> doc_tokens, std::size_t max_passage_len, std::uint64_t seed,
                          std::string_view doc_id);

}  // namespace noiserank
