// Copyright Contributors to the nrt Project
// SPDX-License-Identifier: Apache-2.0
#include "nrt/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "nrt/rng.hpp"

namespace nrt {

GradCheckReport grad_check(const std::vector<Tensor>& params,
                           const std::function<Tensor()>& loss_fn,
                           const GradCheckOptions& opts) {
  const double l0 = loss_fn().value();
  const double l1 = loss_fn().value();
  if (std::memcmp(&l0, &l1, sizeof(double)) != 0)
    throw NumericError("grad_check: loss_fn is not deterministic (" + std::to_string(l0) +
                       " vs " + std::to_string(l1) + ")");

  // analytic gradients, from clean accumulators
  std::vector<std::vector<double>> saved_grads;
  for (auto p : params) {
    saved_grads.push_back(p.has_grad() ? p.grad() : std::vector<double>());
    p.zero_grad();
  }
  backward(loss_fn());
  std::vector<std::vector<double>> analytic;
  for (const auto& p : params) analytic.push_back(p.grad());

  GradCheckReport rep;
  double sum_rel = 0.0;
  Rng rng(opts.sample_seed);
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor p = params[pi];
    const int64_t n = p.numel();
    std::vector<int64_t> picks;
    if (opts.max_per_param < 0 || opts.max_per_param >= n) {
      picks.resize(n);
      for (int64_t i = 0; i < n; ++i) picks[i] = i;
    } else {
      for (int64_t i = 0; i < opts.max_per_param; ++i)
        picks.push_back(static_cast<int64_t>(rng.uniform_index(n)));
      std::sort(picks.begin(), picks.end());
      picks.erase(std::unique(picks.begin(), picks.end()), picks.end());
    }
    auto& data = p.node()->val;
    for (int64_t i : picks) {
      const double orig = data[i];
      double num;
      {
        NoGradGuard ng;
        data[i] = orig + opts.step;
        const double hi = loss_fn().value();
        data[i] = orig - opts.step;
        const double lo = loss_fn().value();
        data[i] = orig;
        num = (hi - lo) / (2.0 * opts.step);
      }
      const double ana = analytic[pi][i];
      const double rel = std::abs(ana - num) / std::max({1e-3, std::abs(ana), std::abs(num)});
      sum_rel += rel;
      rep.checked++;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst = {p->name, i, ana, num, rel};
      }
    }
  }
  rep.mean_rel_err = rep.checked ? sum_rel / static_cast<double>(rep.checked) : 0.0;
  rep.pass = rep.max_rel_err < opts.tolerance;

  // restore caller-visible gradient state
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor p = params[pi];
    if (saved_grads[pi].empty())
      p.zero_grad();
    else
      p.node()->grad = saved_grads[pi];
  }
  return rep;
}

}  // namespace nrt
