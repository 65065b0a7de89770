#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "noiserank/corpus.hpp"
#include "noiserank/retrieval.hpp"
#include "noiserank/rng.hpp"

namespace noiserank {

// One contiguous rank interval of a candidate list.
struct Bag {
  std::string query_id;
  std::size_t index = 0;
  std::vector<Candidate> entries;

  bool operator==(const Bag&) const = default;
};

struct BagPartition {
  std::string query_id;
  std::vector<Bag> bags;
};

// Splits N candidates into M contiguous bags: the first N mod M bags hold
// ceil(N/M) entries, the rest floor(N/M). Throws ValidationError unless
// 1 <= M <= N.
BagPartition build_bags(const CandidateList& candidates, std::size_t num_bags);

struct Group {
  std::string query_id;
  std::vector<std::string> members;
  std::optional<std::size_t> positive_index;  // 0 when present
  std::size_t source_bag = 0;

  bool operator==(const Group&) const = default;
};

struct TrainingBatch {
  std::string query_id;
  std::vector<Group> groups;
  std::uint64_t rng_seed = 0;

  // Index of the group holding the positive.
  std::size_t positive_group() const;

  bool operator==(const TrainingBatch&) const = default;
};

// Draws s distinct members of the bag uniformly without replacement. A
// force_include document is always drawn and placed first; the others keep
// rank order. Documents in `exclude` are never drawn. Throws ValidationError
// if force_include is not in the bag or fewer than s documents are eligible.
Group sample_group(const Bag& bag, std::size_t s, Rng& rng, std::optional<std::string_view> force_include = {},
                   const std::set<std::string>& exclude = {});

// Bag sampling: one group per bag, in bag order. The bag holding the labeled
// positive contributes a group with that positive at index 0; other labeled
// positives of the query are never drawn as negatives. A bag with fewer
// than s eligible documents contributes all of them, or nothing if fewer than
// two remain. Returns nullopt (query skipped) when no labeled positive is
// among the candidates or its group would have fewer than two members. Uses
// min(M, N) bags when the list is shorter than M.
std::optional<TrainingBatch> build_batch(const CandidateList& candidates, const Qrels& qrels, std::size_t num_bags,
                                         std::size_t s, std::uint64_t seed);

// Baseline sampler: a single group of the positive plus s - 1 negatives drawn
// uniformly from all non-positive candidates.
std::optional<TrainingBatch> build_batch_random(const CandidateList& candidates, const Qrels& qrels, std::size_t s,
                                                std::uint64_t seed);

}  // namespace noiserank
