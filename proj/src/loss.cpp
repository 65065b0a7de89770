#include "noiserank/loss.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "noiserank/error.hpp"

namespace noiserank {

LceResult lce_loss(std::span<const double> scores, std::size_t positive_index) {
  if (scores.size() < 2) throw ValidationError("lce_loss needs at least two scores");
  if (positive_index >= scores.size()) throw ValidationError("positive index out of range");
  for (double s : scores)
    if (!std::isfinite(s)) throw NumericError("lce_loss got a non-finite score");

  const auto top = static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) - scores.begin());
  const double m = scores[top];
  LceResult out;
  out.grad.resize(scores.size());
  double rest = 0.0;  // sum of exp(s - m) over all but the maximum
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out.grad[i] = std::exp(scores[i] - m);
    if (i != top) rest += out.grad[i];
  }
  out.loss = (m - scores[positive_index]) + std::log1p(rest);
  const double norm = 1.0 + rest;
  for (auto& g : out.grad) g /= norm;
  out.grad[positive_index] -= 1.0;
  return out;
}

namespace {

void check_finite(std::span<const double> values, std::string_view what, const std::string& query_id) {
  for (double v : values)
    if (!std::isfinite(v)) throw NumericError(fmt::format("non-finite {} in batch for query {}", what, query_id));
}

struct MemberState {
  const TokenSequence* query = nullptr;
  PassageSet passages;
  std::size_t best = 0;
  PairActivation act;  // of the best passage
  double score = 0.0;
};

struct Forward {
  std::vector<std::vector<MemberState>> members;  // [group][member]
  std::vector<GroupActivation> groups;
  std::vector<double> group_scores;
  std::size_t positive_group = 0;
  LceResult individual;
  LceResult group;
  LossBreakdown loss;
};

Forward forward(const ScorerParams& params, const TrainingBatch& batch, const ModelInputs& inputs,
                std::uint64_t passage_seed, double lambda_group) {
  if (batch.groups.empty()) throw ValidationError("batch for " + batch.query_id + " has no groups");
  Forward fw;
  fw.positive_group = batch.positive_group();
  const auto& pos_group = batch.groups[fw.positive_group];
  if (*pos_group.positive_index != 0) throw ValidationError("positive must sit at index 0 of its group");

  const TokenSequence& query = inputs.query(batch.query_id);
  fw.members.resize(batch.groups.size());
  for (std::size_t g = 0; g < batch.groups.size(); ++g) {
    for (const auto& doc_id : batch.groups[g].members) {
      MemberState m;
      m.query = &query;
      m.passages = inputs.passages(doc_id, passage_seed);
      for (std::size_t k = 0; k < kPassagesPerDocument; ++k) {
        PairActivation act = encode_pair_activation(params, query, m.passages.passages[k]);
        const double s = score_from_repr(params, act.repr);
        if (k == 0 || s > m.score) {
          m.best = k;
          m.score = s;
          m.act = std::move(act);
        }
      }
      check_finite(m.act.repr, "representation", batch.query_id);
      fw.members[g].push_back(std::move(m));
    }
  }

  std::vector<double> member_scores;
  for (const auto& m : fw.members[fw.positive_group]) member_scores.push_back(m.score);
  check_finite(member_scores, "document score", batch.query_id);
  fw.individual = lce_loss(member_scores, 0);

  if (batch.groups.size() >= 2) {
    for (const auto& group : fw.members) {
      std::vector<Representation> reps;
      for (const auto& m : group) reps.push_back(m.act.repr);
      fw.groups.push_back(group_encode_activation(params, reps));
      check_finite(fw.groups.back().feature, "group feature", batch.query_id);
      fw.group_scores.push_back(group_score(params, fw.groups.back().feature));
    }
    check_finite(fw.group_scores, "group score", batch.query_id);
    fw.group = lce_loss(fw.group_scores, fw.positive_group);
  }

  fw.loss.lce_individual = fw.individual.loss;
  fw.loss.lce_group = fw.group.loss;
  fw.loss.lambda_group = lambda_group;
  fw.loss.total = fw.loss.lce_individual + lambda_group * fw.loss.lce_group;
  if (!std::isfinite(fw.loss.total)) throw NumericError("non-finite loss for query " + batch.query_id);
  return fw;
}

// Backpropagates d loss / d repr and d loss / d score of one member through
// the tanh layer and the mean-pooled embeddings.
void backprop_member(const ScorerParams& params, const MemberState& m, std::span<const double> d_repr,
                     double d_score, GradientSet& grads) {
  const auto& d = params.dims;
  const auto& r = m.act.repr;
  std::vector<double> dz(d.hidden_dim);
  for (std::size_t j = 0; j < d.hidden_dim; ++j) {
    grads.projection[j] += d_score * r[j];
    const double dr = d_repr[j] + d_score * params.projection[j];
    dz[j] = dr * (1.0 - r[j] * r[j]);
    grads.ffn_bias[j] += dz[j];
  }
  std::vector<double> dx(d.emb_dim, 0.0);
  for (std::size_t i = 0; i < d.emb_dim; ++i) {
    const double x = m.act.pooled[i];
    const double* w = params.ffn_weight.data() + i * d.hidden_dim;
    double* gw = grads.ffn_weight.data() + i * d.hidden_dim;
    double acc = 0.0;
    for (std::size_t j = 0; j < d.hidden_dim; ++j) {
      gw[j] += x * dz[j];
      acc += w[j] * dz[j];
    }
    dx[i] = acc / static_cast<double>(m.act.length);
  }
  auto add = [&](TermId tok) {
    if (tok >= d.vocab_size) tok = kUnkToken;
    double* row = grads.embedding.data() + static_cast<std::size_t>(tok) * d.emb_dim;
    for (std::size_t i = 0; i < d.emb_dim; ++i) row[i] += dx[i];
  };
  for (TermId t : *m.query) add(t);
  add(kSepToken);
  for (TermId t : m.passages.passages[m.best]) add(t);
}

}  // namespace

LossBreakdown batch_loss_value(const ScorerParams& params, const TrainingBatch& batch, const ModelInputs& inputs,
                               std::uint64_t passage_seed, double lambda_group) {
  return forward(params, batch, inputs, passage_seed, lambda_group).loss;
}

BatchLoss batch_loss(const ScorerParams& params, const TrainingBatch& batch, const ModelInputs& inputs,
                     std::uint64_t passage_seed, double lambda_group) {
  const Forward fw = forward(params, batch, inputs, passage_seed, lambda_group);
  const auto& d = params.dims;
  BatchLoss out{fw.loss, GradientSet::zeros(d)};
  GradientSet& grads = out.grads;

  // d loss / d repr per member, from the group path.
  std::vector<std::vector<std::vector<double>>> d_repr(fw.members.size());
  for (std::size_t g = 0; g < fw.members.size(); ++g)
    d_repr[g].assign(fw.members[g].size(), std::vector<double>(d.hidden_dim, 0.0));

  if (!fw.groups.empty() && lambda_group != 0.0) {
    for (std::size_t g = 0; g < fw.groups.size(); ++g) {
      const double d_gs = lambda_group * fw.group.grad[g];
      const auto& act = fw.groups[g];
      for (std::size_t f = 0; f < d.num_filters; ++f) {
        grads.group_projection[f] += d_gs * act.feature[f];
        const double d_feat = d_gs * params.group_projection[f];
        grads.conv_bias[f] += d_feat;
        const std::size_t p = act.argmax_position[f];
        const double* filter = params.conv_filters.data() + f * d.hidden_dim * d.filter_width;
        double* gfilter = grads.conv_filters.data() + f * d.hidden_dim * d.filter_width;
        for (std::size_t h = 0; h < d.hidden_dim; ++h) {
          for (std::size_t w = 0; w < d.filter_width; ++w) {
            gfilter[h * d.filter_width + w] += d_feat * fw.members[g][p + w].act.repr[h];
            d_repr[g][p + w][h] += d_feat * filter[h * d.filter_width + w];
          }
        }
      }
    }
  }

  for (std::size_t g = 0; g < fw.members.size(); ++g) {
    for (std::size_t i = 0; i < fw.members[g].size(); ++i) {
      const double d_score = g == fw.positive_group ? fw.individual.grad[i] : 0.0;
      backprop_member(params, fw.members[g][i], d_repr[g][i], d_score, grads);
    }
  }
  for (const auto& t : grads.tensors()) check_finite(t.values, fmt::format("gradient of {}", t.name), batch.query_id);
  return out;
}

namespace {

using PerturbedLoss = std::function<long double(std::size_t tensor, std::size_t index, long double delta)>;

FiniteDifferenceReport difference_check(const ScorerParams& params, const GradientSet& analytic,
                                        const PerturbedLoss& loss_at, double epsilon) {
  if (!(epsilon > 0.0)) throw ValidationError("epsilon must be > 0");
  if (!(analytic.dims == params.dims)) throw ValidationError("gradient shape does not match the parameters");
  FiniteDifferenceReport report;
  const auto param_tensors = params.tensors();
  const auto grad_tensors = analytic.tensors();
  const long double eps = epsilon;
  for (std::size_t t = 0; t < kNumTensors; ++t) {
    for (std::size_t i = 0; i < param_tensors[t].values.size(); ++i) {
      const long double plus = loss_at(t, i, eps);
      const long double minus = loss_at(t, i, -eps);
      const double numeric = static_cast<double>((plus - minus) / (2.0L * eps));
      const double a = grad_tensors[t].values[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      ++report.scalars_checked;
      if (rel > report.max_relative_error || report.scalars_checked == 1) {
        report.max_relative_error = rel;
        report.worst_tensor = std::string(param_tensors[t].name);
        report.worst_index = i;
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }
  return report;
}

using Ext = long double;

// Forward pass of one batch in long double with one parameter shifted at a
// time. Stages upstream of the shifted tensor are reused from the unshifted
// pass; the result is the same function evaluated from scratch.
class ExtendedLoss {
 public:
  ExtendedLoss(const ScorerParams& params, const TrainingBatch& batch, const ModelInputs& inputs,
               std::uint64_t passage_seed, double lambda_group)
      : d_(params.dims), lambda_(lambda_group) {
    const auto tensors = params.tensors();
    for (std::size_t t = 0; t < kNumTensors; ++t) p_[t].assign(tensors[t].values.begin(), tensors[t].values.end());
    positive_group_ = batch.positive_group();
    const TokenSequence& query = inputs.query(batch.query_id);
    for (const auto& group : batch.groups) {
      group_sizes_.push_back(group.members.size());
      for (const auto& doc_id : group.members) {
        const PassageSet ps = inputs.passages(doc_id, passage_seed);
        for (const auto& passage : ps.passages) {
          Slot s;
          s.tokens.assign(query.begin(), query.end());
          s.tokens.push_back(kSepToken);
          s.tokens.insert(s.tokens.end(), passage.begin(), passage.end());
          for (auto& tok : s.tokens)
            if (tok >= d_.vocab_size) tok = kUnkToken;
          s.distinct = s.tokens;
          std::sort(s.distinct.begin(), s.distinct.end());
          s.distinct.erase(std::unique(s.distinct.begin(), s.distinct.end()), s.distinct.end());
          pool(s.tokens, s.pooled);
          hidden(s.pooled, s.pre, s.repr);
          s.score = score(s.repr);
          slots_.push_back(std::move(s));
        }
      }
    }
  }

  Ext operator()(std::size_t tensor, std::size_t index, Ext delta) {
    const Ext original = p_[tensor][index];
    p_[tensor][index] = original + delta;
    const Ext value = evaluate(tensor, index, delta);
    p_[tensor][index] = original;
    return value;
  }

 private:
  struct Slot {
    TokenSequence tokens;
    TokenSequence distinct;
    std::vector<Ext> pooled, pre, repr;  // pre: hidden pre-activation
    Ext score = 0;
  };

  void pool(const TokenSequence& tokens, std::vector<Ext>& out) const {
    out.assign(d_.emb_dim, 0);
    for (TermId tok : tokens)
      for (std::size_t i = 0; i < d_.emb_dim; ++i) out[i] += p_[0][tok * d_.emb_dim + i];
    for (auto& v : out) v /= static_cast<Ext>(tokens.size());
  }

  void hidden(const std::vector<Ext>& pooled, std::vector<Ext>& pre, std::vector<Ext>& out) const {
    pre.assign(p_[2].begin(), p_[2].end());
    for (std::size_t i = 0; i < d_.emb_dim; ++i)
      for (std::size_t j = 0; j < d_.hidden_dim; ++j) pre[j] += p_[1][i * d_.hidden_dim + j] * pooled[i];
    out.resize(pre.size());
    for (std::size_t j = 0; j < pre.size(); ++j) out[j] = std::tanh(pre[j]);
  }

  Ext score(const std::vector<Ext>& repr) const {
    Ext s = 0;
    for (std::size_t j = 0; j < d_.hidden_dim; ++j) s += p_[3][j] * repr[j];
    return s;
  }

  static Ext lce(const std::vector<Ext>& s, std::size_t positive) {
    const Ext m = *std::max_element(s.begin(), s.end());
    Ext sum = 0;
    for (Ext v : s) sum += std::exp(v - m);
    return m - s[positive] + std::log(sum);
  }

  // A shift of ffn_weight[i][j] or ffn_bias[j] moves only hidden unit j, so
  // its pre-activation is updated in place rather than recomputed.
  Ext evaluate(std::size_t tensor, std::size_t index, Ext delta) {
    std::vector<Ext> pooled, pre, repr;
    std::vector<std::vector<Ext>> member_repr;
    std::vector<Ext> member_score;
    for (std::size_t m = 0; m * kPassagesPerDocument < slots_.size(); ++m) {
      Ext best_score = 0;
      std::vector<Ext> best_repr;
      for (std::size_t k = 0; k < kPassagesPerDocument; ++k) {
        const Slot& s = slots_[m * kPassagesPerDocument + k];
        const std::vector<Ext>* r = &s.repr;
        Ext sc = s.score;
        const bool embedding_hit =
            tensor == 0 && std::binary_search(s.distinct.begin(), s.distinct.end(),
                                              static_cast<TermId>(index / d_.emb_dim));
        if (embedding_hit) {
          pool(s.tokens, pooled);
          hidden(pooled, pre, repr);
          r = &repr;
          sc = score(repr);
        } else if (tensor == 1 || tensor == 2) {
          const std::size_t j = index % d_.hidden_dim;
          const Ext x = tensor == 1 ? s.pooled[index / d_.hidden_dim] : Ext{1};
          repr = s.repr;
          repr[j] = std::tanh(s.pre[j] + delta * x);
          r = &repr;
          sc = score(repr);
        } else if (tensor == 3) {
          sc = score(s.repr);
        }
        if (k == 0 || sc > best_score) {
          best_score = sc;
          best_repr = *r;
        }
      }
      member_repr.push_back(std::move(best_repr));
      member_score.push_back(best_score);
    }

    std::size_t offset = 0;
    std::vector<Ext> positive_scores, group_scores;
    for (std::size_t g = 0; g < group_sizes_.size(); ++g) {
      const std::size_t n = group_sizes_[g];
      if (g == positive_group_)
        positive_scores.assign(member_score.begin() + static_cast<std::ptrdiff_t>(offset),
                               member_score.begin() + static_cast<std::ptrdiff_t>(offset + n));
      if (group_sizes_.size() >= 2) {
        Ext gs = 0;
        for (std::size_t f = 0; f < d_.num_filters; ++f) {
          Ext feature = 0;
          for (std::size_t p = 0; p + d_.filter_width <= n; ++p) {
            Ext out = p_[5][f];
            for (std::size_t h = 0; h < d_.hidden_dim; ++h)
              for (std::size_t w = 0; w < d_.filter_width; ++w)
                out += p_[4][(f * d_.hidden_dim + h) * d_.filter_width + w] * member_repr[offset + p + w][h];
            if (p == 0 || out > feature) feature = out;
          }
          gs += p_[6][f] * feature;
        }
        group_scores.push_back(gs);
      }
      offset += n;
    }
    Ext total = lce(positive_scores, 0);
    if (group_scores.size() >= 2) total += static_cast<Ext>(lambda_) * lce(group_scores, positive_group_);
    return total;
  }

  ModelDims d_;
  double lambda_;
  std::array<std::vector<Ext>, kNumTensors> p_;
  std::size_t positive_group_ = 0;
  std::vector<std::size_t> group_sizes_;
  std::vector<Slot> slots_;
};

}  // namespace

FiniteDifferenceReport finite_difference_check(const ScorerParams& params, const GradientSet& analytic,
                                               const std::function<double(const ScorerParams&)>& loss_fn,
                                               double epsilon) {
  ScorerParams probe = params;
  auto probe_tensors = probe.tensors();
  return difference_check(
      params, analytic,
      [&](std::size_t t, std::size_t i, long double delta) -> long double {
        auto values = probe_tensors[t].values;
        const double original = values[i];
        values[i] = original + static_cast<double>(delta);
        const double loss = loss_fn(probe);
        values[i] = original;
        return loss;
      },
      epsilon);
}

FiniteDifferenceReport finite_difference_check(const ScorerParams& params, const GradientSet& analytic,
                                               const TrainingBatch& batch, const ModelInputs& inputs,
                                               std::uint64_t passage_seed, double lambda_group, double epsilon) {
  params.validate();
  ExtendedLoss loss(params, batch, inputs, passage_seed, lambda_group);
  return difference_check(params, analytic, std::ref(loss), epsilon);
}

FiniteDifferenceReport finite_difference_check(const ScorerParams& params, const TrainingBatch& batch,
                                               const ModelInputs& inputs, std::uint64_t passage_seed,
                                               double lambda_group, double epsilon) {
  const BatchLoss analytic = batch_loss(params, batch, inputs, passage_seed, lambda_group);
  return finite_difference_check(params, analytic.grads, batch, inputs, passage_seed, lambda_group, epsilon);
}

}  // namespace noiserank
