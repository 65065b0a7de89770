#include "noiserank/passage.hpp"

#include <algorithm>

#include "noiserank/error.hpp"
#include "noiserank/rng.hpp"

namespace noiserank {

std::array<PassageSpan, kPassagesPerDocument> passage_offsets(std::size_t doc_length, std::size_t max_passage_len,
                                                              std::uint64_t seed, std::string_view doc_id) {
  if (doc_length == 0) throw ValidationError("cannot split an empty document");
  if (max_passage_len < 1) throw ValidationError("max_passage_len must be >= 1");
  const std::size_t len = doc_length;
  const std::size_t w = max_passage_len;

  if (len <= w) {
    PassageSpan whole{0, len};
    return {whole, whole, whole, whole};
  }
  PassageSpan head{0, w};
  PassageSpan tail{len - w, len};
  if (len <= 2 * w) return {head, head, tail, tail};

  const std::size_t interior = len - 2 * w;
  if (interior < w) {
    PassageSpan mid{w, len - w};
    return {head, mid, mid, tail};
  }
  Rng rng(mix_seed(seed, stable_hash(doc_id)));
  const std::size_t positions = interior - w + 1;
  const std::size_t s1 = w + uniform_index(rng, positions);
  const std::size_t s2 = w + uniform_index(rng, positions);
  return {head, PassageSpan{s1, s1 + w}, PassageSpan{s2, s2 + w}, tail};
}

PassageSet split_passages(std::span<const TermId> doc_tokens, std::size_t max_passage_len, std::uint64_t seed,
                          std::string_view doc_id) {
  PassageSet set;
  set.offsets = passage_offsets(doc_tokens.size(), max_passage_len, seed, doc_id);
  for (std::size_t i = 0; i < kPassagesPerDocument; ++i) {
    auto slice = doc_tokens.subspan(set.offsets[i].start, set.offsets[i].size());
    set.passages[i].assign(slice.begin(), slice.end());
  }
  return set;
}

}  // namespace noiserank
