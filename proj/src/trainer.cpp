#include "noiserank/trainer.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "noiserank/error.hpp"
#include "noiserank/eval.hpp"
#include "noiserank/rng.hpp"
#include "noiserank/sampling.hpp"

namespace noiserank {

std::string to_string(SamplerKind kind) { return kind == SamplerKind::kBag ? "bag" : "random"; }

SamplerKind parse_sampler(std::string_view name) {
  if (name == "bag") return SamplerKind::kBag;
  if (name == "random") return SamplerKind::kRandom;
  throw ValidationError("sampler must be 'bag' or 'random', got '" + std::string(name) + "'");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ValidationError("epochs must be >= 1");
  if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be > 0");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
    throw ValidationError("adam betas must lie in [0, 1)");
  if (!(adam_epsilon > 0.0)) throw ValidationError("adam_epsilon must be > 0");
  if (!(lambda_group >= 0.0) || !std::isfinite(lambda_group)) throw ValidationError("lambda_group must be >= 0");
  if (m_bags < 1) throw ValidationError("m_bags must be >= 1");
  if (group_size < 2) throw ValidationError("group_size must be >= 2");
  if (top_k < 1) throw ValidationError("top_k must be >= 1");
  if (m_bags > top_k) throw ValidationError("m_bags may not exceed top_k");
  if (model.filter_width > group_size) throw ValidationError("filter_width may not exceed group_size");
  if (model.max_passage_len < 1) throw ValidationError("max_passage_len must be >= 1");
}

namespace {

template <typename T>
T parse_number(std::string_view key, std::string_view value, std::string_view source) {
  T out{};
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size())
    throw ValidationError(fmt::format("{}: bad value '{}' for {}", source, value, key));
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

void apply_config_text(TrainConfig& cfg, std::string_view text, std::string_view source) {
  std::size_t lineno = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = trim(text.substr(pos, end - pos));
    pos = end + 1;
    ++lineno;
    if (line.empty() || line.front() == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ValidationError(fmt::format("{}:{}: expected key=value", source, lineno));
    std::string_view key = trim(line.substr(0, eq));
    std::string_view value = trim(line.substr(eq + 1));
    auto size = [&] { return parse_number<std::size_t>(key, value, source); };
    auto real = [&] { return parse_number<double>(key, value, source); };
    if (key == "epochs") cfg.epochs = size();
    else if (key == "learning_rate") cfg.learning_rate = real();
    else if (key == "adam_beta1") cfg.adam_beta1 = real();
    else if (key == "adam_beta2") cfg.adam_beta2 = real();
    else if (key == "adam_epsilon") cfg.adam_epsilon = real();
    else if (key == "lambda_group") cfg.lambda_group = real();
    else if (key == "m_bags" || key == "M") cfg.m_bags = size();
    else if (key == "group_size" || key == "s") cfg.group_size = size();
    else if (key == "top_k" || key == "N") cfg.top_k = size();
    else if (key == "sampler") cfg.sampler = parse_sampler(value);
    else if (key == "seed") cfg.seed = parse_number<std::uint64_t>(key, value, source);
    else if (key == "checkpoint_every") cfg.checkpoint_every = size();
    else if (key == "emb_dim") cfg.model.emb_dim = size();
    else if (key == "hidden_dim") cfg.model.hidden_dim = size();
    else if (key == "num_filters") cfg.model.num_filters = size();
    else if (key == "filter_width") cfg.model.filter_width = size();
    else if (key == "max_passage_len") cfg.model.max_passage_len = size();
    else throw ValidationError(fmt::format("{}:{}: unknown key '{}'", source, lineno, key));
  }
}

TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  apply_config_text(base, ss.str(), path.string());
  return base;
}

std::string format_train_config(const TrainConfig& c) {
  return fmt::format(
      "epochs={}\nlearning_rate={}\nadam_beta1={}\nadam_beta2={}\nadam_epsilon={}\nlambda_group={}\n"
      "m_bags={}\ngroup_size={}\ntop_k={}\nsampler={}\nseed={}\ncheckpoint_every={}\n"
      "emb_dim={}\nhidden_dim={}\nnum_filters={}\nfilter_width={}\nmax_passage_len={}\n",
      c.epochs, c.learning_rate, c.adam_beta1, c.adam_beta2, c.adam_epsilon, c.lambda_group, c.m_bags,
      c.group_size, c.top_k, to_string(c.sampler), c.seed, c.checkpoint_every, c.model.emb_dim,
      c.model.hidden_dim, c.model.num_filters, c.model.filter_width, c.model.max_passage_len);
}

AdamState AdamState::for_params(const ScorerParams& params) {
  return AdamState{GradientSet::zeros(params.dims), GradientSet::zeros(params.dims), 0};
}

void adam_step(ScorerParams& params, const GradientSet& grads, AdamState& state, const AdamConfig& cfg) {
  if (!(grads.dims == params.dims) || !(state.first_moment.dims == params.dims) ||
      !(state.second_moment.dims == params.dims))
    throw ValidationError("adam_step: shapes of parameters, gradients and state differ");
  for (const auto& t : grads.tensors())
    for (double g : t.values)
      if (!std::isfinite(g)) throw NumericError(fmt::format("non-finite gradient in {}", t.name));

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(cfg.beta1, t);
  const double correction2 = 1.0 - std::pow(cfg.beta2, t);
  auto p = params.tensors();
  auto g = grads.tensors();
  auto m = state.first_moment.tensors();
  auto v = state.second_moment.tensors();
  for (std::size_t k = 0; k < kNumTensors; ++k) {
    for (std::size_t i = 0; i < p[k].values.size(); ++i) {
      const double gi = g[k].values[i];
      double& mi = m[k].values[i];
      double& vi = v[k].values[i];
      mi = cfg.beta1 * mi + (1.0 - cfg.beta1) * gi;
      vi = cfg.beta2 * vi + (1.0 - cfg.beta2) * gi * gi;
      const double m_hat = mi / correction1;
      const double v_hat = vi / correction2;
      p[k].values[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
  }
}

std::uint64_t passage_seed_for_epoch(std::uint64_t seed, std::size_t epoch) {
  return mix_seed(seed, 0x9a55a6e0ULL + epoch);
}

namespace {

CandidateList truncate(const CandidateList& list, std::size_t k) {
  CandidateList out{list.query_id, {}};
  out.entries.assign(list.entries.begin(),
                     list.entries.begin() + static_cast<std::ptrdiff_t>(std::min(k, list.entries.size())));
  return out;
}

std::optional<TrainingBatch> make_batch(const CandidateList& list, const Qrels& qrels, const TrainConfig& cfg,
                                        std::uint64_t seed) {
  if (cfg.sampler == SamplerKind::kBag) return build_batch(list, qrels, cfg.m_bags, cfg.group_size, seed);
  return build_batch_random(list, qrels, cfg.group_size, seed);
}

}  // namespace

TrainResult train(const TrainingData& data, const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  if (data.inputs == nullptr) throw ValidationError("training data has no model inputs");
  const ModelInputs& inputs = *data.inputs;

  std::vector<CandidateList> train_lists;
  for (const auto& l : data.train_candidates) train_lists.push_back(truncate(l, cfg.top_k));
  std::vector<CandidateList> dev_lists;
  for (const auto& l : data.dev_candidates) dev_lists.push_back(truncate(l, cfg.top_k));

  std::size_t eligible = 0;
  for (const auto& l : train_lists) {
    const auto pos = labeled_positives(data.train_qrels, l.query_id);
    if (std::any_of(l.entries.begin(), l.entries.end(), [&](const Candidate& c) { return pos.contains(c.doc_id); }))
      ++eligible;
  }
  if (eligible == 0) throw ValidationError("no training query has a labeled positive within top_k");

  ModelConfig model = cfg.model;
  model.max_group_size = cfg.group_size;
  ScorerParams params = init_params(model, inputs.vocab_size(), cfg.seed);
  AdamState adam = AdamState::for_params(params);
  const AdamConfig adam_cfg{cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon};
  const std::uint64_t inference_seed = passage_seed_for_epoch(cfg.seed, 0);

  TrainResult result;
  result.best = params;
  result.best_dev_mrr = -1.0;
  std::vector<std::size_t> order(train_lists.size());
  std::size_t steps = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng order_rng(mix_seed(cfg.seed, 0x0dde7ULL + epoch));
    shuffle(std::span(order), order_rng);
    const std::uint64_t passage_seed = passage_seed_for_epoch(cfg.seed, epoch);

    EpochRecord rec;
    rec.epoch = epoch + 1;
    std::size_t batches = 0;
    for (std::size_t qi : order) {
      const auto& list = train_lists[qi];
      const std::uint64_t batch_seed = mix_seed(mix_seed(cfg.seed, epoch), stable_hash(list.query_id));
      auto batch = make_batch(list, data.train_qrels, cfg, batch_seed);
      if (!batch) {
        ++rec.skipped_queries;
        continue;
      }
      BatchLoss bl = batch_loss(params, *batch, inputs, passage_seed, cfg.lambda_group);
      adam_step(params, bl.grads, adam, adam_cfg);
      rec.mean_total += bl.loss.total;
      rec.mean_lce_individual += bl.loss.lce_individual;
      rec.mean_lce_group += bl.loss.lce_group;
      ++batches;
      ++steps;
      if (cfg.checkpoint_every > 0 && steps % cfg.checkpoint_every == 0 && hooks.on_checkpoint)
        hooks.on_checkpoint(params, steps);
    }
    if (batches > 0) {
      rec.mean_total /= static_cast<double>(batches);
      rec.mean_lce_individual /= static_cast<double>(batches);
      rec.mean_lce_group /= static_cast<double>(batches);
    }
    const RunFile dev_run = rerank(params, dev_lists, inputs, inference_seed, "dev", cfg.threads);
    rec.dev_mrr = mrr_at_k(dev_run, data.dev_qrels, cfg.top_k).mrr_at_k;
    spdlog::info("epoch {}: loss {:.4f} (individual {:.4f}, group {:.4f}), dev MRR@{} {:.4f}, skipped {}", rec.epoch,
                 rec.mean_total, rec.mean_lce_individual, rec.mean_lce_group, cfg.top_k, rec.dev_mrr,
                 rec.skipped_queries);
    if (rec.dev_mrr > result.best_dev_mrr) {
      result.best_dev_mrr = rec.dev_mrr;
      result.best_epoch = rec.epoch;
      result.best = params;
    }
    result.history.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec);
  }
  return result;
}

std::string format_history_csv(std::span<const EpochRecord> history) {
  std::string out = "epoch,mean_total,mean_lce_individual,mean_lce_group,dev_mrr,skipped_queries\n";
  for (const auto& r : history)
    out += fmt::format("{},{:.6f},{:.6f},{:.6f},{:.6f},{}\n", r.epoch, r.mean_total, r.mean_lce_individual,
                       r.mean_lce_group, r.dev_mrr, r.skipped_queries);
  return out;
}

}  // namespace noiserank
