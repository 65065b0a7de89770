#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "noiserank/sampling.hpp"
#include "noiserank/scorer.hpp"

namespace noiserank {

struct LceResult {
  double loss = 0.0;
  std::vector<double> grad;  // d loss / d scores
};

// -log softmax(scores)[positive_index], with the positive included in the
// normalizer. Gradient is softmax(scores) - onehot(positive_index). Throws
// ValidationError on fewer than two scores or a bad index, NumericError on
// non-finite input.
LceResult lce_loss(std::span<const double> scores, std::size_t positive_index);

struct LossBreakdown {
  double total = 0.0;
  double lce_individual = 0.0;
  double lce_group = 0.0;
  double lambda_group = 0.0;
};

struct BatchLoss {
  LossBreakdown loss;
  GradientSet grads;
};

// Combined loss of one batch and its exact gradient:
//   lce_individual  LCE over the member scores of the positive group
//   lce_group       LCE over the group scores, the positive group as target
//                   (0 when the batch has a single group)
//   total           lce_individual + lambda_group * lce_group
// Each member is scored through its four passages (offsets drawn with
// passage_seed); the argmax passage's representation feeds the group encoder.
BatchLoss batch_loss(const ScorerParams& params, const TrainingBatch& batch, const ModelInputs& inputs,
                     std::uint64_t passage_seed, double lambda_group);

// Forward pass only.
LossBreakdown batch_loss_value(const ScorerParams& params, const TrainingBatch& batch, const ModelInputs& inputs,
                               std::uint64_t passage_seed, double lambda_group);

struct FiniteDifferenceReport {
  double max_relative_error = 0.0;
  std::string worst_tensor;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t scalars_checked = 0;
};

// Central differences (L(p + eps) - L(p - eps)) / 2eps for every scalar
// parameter, compared with `analytic`. Relative error uses the denominator
// max(|analytic|, |numeric|, 1e-8).
FiniteDifferenceReport finite_difference_check(const ScorerParams& params, const GradientSet& analytic,
                                               const std::function<double(const ScorerParams&)>& loss_fn,
                                               double epsilon);

// One batch. The perturbed losses are evaluated in extended precision
// (long double) from the same double parameters, so the difference quotient
// carries ~1e-14 absolute error instead of the ~1e-11 a double loss gives at
// eps = 1e-5. Without `analytic`, batch_loss supplies the gradient.
FiniteDifferenceReport finite_difference_check(const ScorerParams& params, const TrainingBatch& batch,
                                               const ModelInputs& inputs, std::uint64_t passage_seed,
                                               double lambda_group, double epsilon);
FiniteDifferenceReport finite_difference_check(const ScorerParams& params, const GradientSet& analytic,
                                               const TrainingBatch& batch, const ModelInputs& inputs,
                                               std::uint64_t passage_seed, double lambda_group, double epsilon);

}  // namespace noiserank
