#pragma once

#include <map>
#include <optional>
#include <utility>
#include <vector>

#include "color_sieve/selector.hpp"

namespace color_sieve {

/// A backward pass costs this many forwards; one training step on a token is
/// therefore 1 + kBackwardToForward forwards.
inline constexpr double kBackwardToForward = 2.0;
inline constexpr double kTrainStepForwards = 1.0 + kBackwardToForward;

/// FLOPs of one auxiliary-model forward on one token.
inline constexpr double kDefaultFlopsPerForward = 5e8;

struct CostParams {
  double m = 0.0;    // prior data size
  double n = 0.0;    // selected data size, same units as m
  double tau = 1.0;
  double L = 1.0;    // target / auxiliary forward cost ratio
  Method method = Method::kColorFilter;

  void validate() const;
};

/// Compute in model forwards, split the way the methods differ: training the
/// prior, selection work that must run during target training, selection work
/// that can run beforehand in parallel, and training the target.
struct CostBreakdown {
  double prior_cost = 0.0;
  double serial_cost = 0.0;
  double parallel_cost = 0.0;
  double training_cost = 0.0;
  double total = 0.0;

  double scoring_cost() const { return prior_cost + serial_cost + parallel_cost; }
};

/// Supported: color_filter, conditional_only, rho_down, rho_down_prior,
/// random, online_color. Anything else throws Error.
CostBreakdown cost(const CostParams& params);

double flops(double forwards, double flops_per_forward = kDefaultFlopsPerForward);

/// One (tokens trained, eval loss) point of a learning curve; lower loss is better.
struct CurvePoint {
  double tokens = 0.0;
  double loss = 0.0;
};

struct MatchCost {
  double tau = 0.0;
  bool reached = false;
  /// Tokens trained at the first point at or below the baseline loss.
  double tokens = 0.0;
  CostBreakdown breakdown;
  double scoring_flops = 0.0;
  double training_flops = 0.0;
};

/// For every tau, the cost to first reach `baseline_final_loss`, with n set to
/// the tokens trained at that point. Curves must be sorted by tokens.
std::vector<MatchCost> cost_to_match(const std::map<double, std::vector<CurvePoint>>& curves,
                                     double baseline_final_loss, const CostParams& params,
                                     double flops_per_forward = kDefaultFlopsPerForward);

}  // namespace color_sieve
