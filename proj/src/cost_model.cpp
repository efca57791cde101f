#include "color_sieve/cost_model.hpp"

#include <cmath>

#include <fmt/format.h>

namespace color_sieve {

void CostParams::validate() const {
  for (double v : {m, n, tau, L}) {
    if (!std::isfinite(v) || v < 0.0) throw Error("cost parameters must be finite and non-negative");
  }
  if (tau < 1.0) throw Error("cost parameter tau must be at least 1");
}

CostBreakdown cost(const CostParams& p) {
  p.validate();
  CostBreakdown c;
  c.training_cost = kTrainStepForwards * p.n * p.L;
  switch (p.method) {
    case Method::kColorFilter:
      c.prior_cost = kTrainStepForwards * p.m;
      c.parallel_cost = 2.0 * p.tau * p.n;
      break;
    case Method::kConditionalOnly:
      c.prior_cost = kTrainStepForwards * p.m;
      c.parallel_cost = p.tau * p.n;
      break;
    case Method::kRhoDown:
      c.serial_cost = p.tau * p.n + kBackwardToForward * p.n;
      c.parallel_cost = p.tau * p.n;
      break;
    case Method::kRhoDownPrior:
      c.prior_cost = kTrainStepForwards * p.m;
      c.serial_cost = p.tau * p.n + kBackwardToForward * p.n;
      c.parallel_cost = p.tau * p.n;
      break;
    case Method::kOnlineColor:
      // Both models see every candidate and are backpropagated on every pick.
      c.prior_cost = kTrainStepForwards * p.m;
      c.serial_cost = 2.0 * p.tau * p.n + 2.0 * kBackwardToForward * p.n;
      break;
    case Method::kRandom:
      break;
    default:
      throw Error(fmt::format("no cost formula for method '{}'", method_name(p.method)));
  }
  c.total = c.prior_cost + c.serial_cost + c.parallel_cost + c.training_cost;
  return c;
}

double flops(double forwards, double flops_per_forward) { return forwards * flops_per_forward; }

std::vector<MatchCost> cost_to_match(const std::map<double, std::vector<CurvePoint>>& curves,
                                     double baseline_final_loss, const CostParams& params,
                                     double flops_per_forward) {
  std::vector<MatchCost> out;
  for (const auto& [tau, curve] : curves) {
    MatchCost mc;
    mc.tau = tau;
    for (const auto& point : curve) {
      if (point.loss <= baseline_final_loss) {
        mc.reached = true;
        mc.tokens = point.tokens;
        break;
      }
    }
    if (mc.reached) {
      CostParams at = params;
      at.tau = tau;
      at.n = mc.tokens;
      mc.breakdown = cost(at);
      mc.scoring_flops = flops(mc.breakdown.scoring_cost(), flops_per_forward);
      mc.training_flops = flops(mc.breakdown.training_cost, flops_per_forward);
    }
    out.push_back(mc);
  }
  return out;
}

}  // namespace color_sieve
