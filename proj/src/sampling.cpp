#include "noiserank/sampling.hpp"

#include <algorithm>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "noiserank/error.hpp"

namespace noiserank {

BagPartition build_bags(const CandidateList& candidates, std::size_t num_bags) {
  const std::size_t n = candidates.entries.size();
  if (num_bags < 1) throw ValidationError("number of bags must be >= 1");
  if (num_bags > n) throw ValidationError(fmt::format("{} bags requested for {} candidates", num_bags, n));
  BagPartition out{candidates.query_id, {}};
  out.bags.reserve(num_bags);
  const std::size_t base = n / num_bags;
  const std::size_t extra = n % num_bags;
  std::size_t pos = 0;
  for (std::size_t j = 0; j < num_bags; ++j) {
    const std::size_t size = base + (j < extra ? 1 : 0);
    Bag bag{candidates.query_id, j, {}};
    bag.entries.assign(candidates.entries.begin() + static_cast<std::ptrdiff_t>(pos),
                       candidates.entries.begin() + static_cast<std::ptrdiff_t>(pos + size));
    out.bags.push_back(std::move(bag));
    pos += size;
  }
  return out;
}

std::size_t TrainingBatch::positive_group() const {
  for (std::size_t g = 0; g < groups.size(); ++g)
    if (groups[g].positive_index) return g;
  throw ValidationError("batch for " + query_id + " has no positive group");
}

Group sample_group(const Bag& bag, std::size_t s, Rng& rng, std::optional<std::string_view> force_include,
                   const std::set<std::string>& exclude) {
  std::vector<std::size_t> pool;
  std::optional<std::size_t> forced;
  for (std::size_t i = 0; i < bag.entries.size(); ++i) {
    const auto& id = bag.entries[i].doc_id;
    if (force_include && id == *force_include)
      forced = i;
    else if (!exclude.contains(id))
      pool.push_back(i);
  }
  if (force_include && !forced)
    throw ValidationError(fmt::format("document {} is not in bag {}", *force_include, bag.index));
  const std::size_t needed = s - (forced ? 1 : 0);
  if (s < 1 || needed > pool.size())
    throw ValidationError(fmt::format("cannot draw {} documents from bag {} with {} eligible", s, bag.index,
                                      pool.size() + (forced ? 1 : 0)));

  // Partial Fisher-Yates over the eligible positions.
  for (std::size_t i = 0; i < needed; ++i) {
    std::size_t j = i + uniform_index(rng, pool.size() - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(needed);
  std::sort(pool.begin(), pool.end());

  Group g{bag.query_id, {}, std::nullopt, bag.index};
  if (forced) {
    g.members.push_back(bag.entries[*forced].doc_id);
    g.positive_index = 0;
  }
  for (std::size_t i : pool) g.members.push_back(bag.entries[i].doc_id);
  return g;
}

namespace {

// Labeled positives present in the list, in rank order.
std::vector<std::string> positives_in(const CandidateList& candidates, const std::set<std::string>& positives) {
  std::vector<std::string> out;
  for (const auto& c : candidates.entries)
    if (positives.contains(c.doc_id)) out.push_back(c.doc_id);
  return out;
}

std::size_t eligible_count(const Bag& bag, const std::set<std::string>& exclude) {
  return static_cast<std::size_t>(std::count_if(bag.entries.begin(), bag.entries.end(),
                                                [&](const Candidate& c) { return !exclude.contains(c.doc_id); }));
}

}  // namespace

std::optional<TrainingBatch> build_batch(const CandidateList& candidates, const Qrels& qrels, std::size_t num_bags,
                                         std::size_t s, std::uint64_t seed) {
  if (s < 2) throw ValidationError("group size must be >= 2");
  if (num_bags < 1) throw ValidationError("number of bags must be >= 1");
  const auto positives = labeled_positives(qrels, candidates.query_id);
  const auto present = positives_in(candidates, positives);
  if (present.empty()) {
    spdlog::debug("query {}: no labeled positive in the top {}, skipped", candidates.query_id,
                  candidates.entries.size());
    return std::nullopt;
  }

  Rng rng(seed);
  const std::string chosen = present[uniform_index(rng, present.size())];
  const auto partition = build_bags(candidates, std::min(num_bags, candidates.entries.size()));

  TrainingBatch batch{candidates.query_id, {}, seed};
  for (const auto& bag : partition.bags) {
    const bool holds_positive = std::any_of(bag.entries.begin(), bag.entries.end(),
                                            [&](const Candidate& c) { return c.doc_id == chosen; });
    // Every labeled positive except the forced one is off limits.
    std::set<std::string> exclude = positives;
    if (holds_positive) exclude.erase(chosen);
    const std::size_t eligible = eligible_count(bag, exclude);
    const std::size_t size = std::min(s, eligible);
    if (size < 2) {
      if (holds_positive) {
        spdlog::debug("query {}: positive bag has {} eligible documents, skipped", candidates.query_id, eligible);
        return std::nullopt;
      }
      continue;
    }
    batch.groups.push_back(holds_positive ? sample_group(bag, size, rng, chosen, exclude)
                                          : sample_group(bag, size, rng, std::nullopt, exclude));
  }
  return batch;
}

std::optional<TrainingBatch> build_batch_random(const CandidateList& candidates, const Qrels& qrels, std::size_t s,
                                                std::uint64_t seed) {
  if (s < 2) throw ValidationError("group size must be >= 2");
  const auto positives = labeled_positives(qrels, candidates.query_id);
  const auto present = positives_in(candidates, positives);
  if (present.empty()) {
    spdlog::debug("query {}: no labeled positive in the top {}, skipped", candidates.query_id,
                  candidates.entries.size());
    return std::nullopt;
  }
  Rng rng(seed);
  const std::string chosen = present[uniform_index(rng, present.size())];
  Bag all{candidates.query_id, 0, candidates.entries};
  std::set<std::string> exclude = positives;
  exclude.erase(chosen);
  const std::size_t size = std::min(s, eligible_count(all, exclude));
  if (size < 2) return std::nullopt;
  TrainingBatch batch{candidates.query_id, {}, seed};
  batch.groups.push_back(sample_group(all, size, rng, chosen, exclude));
  return batch;
}

}  // namespace noiserank
