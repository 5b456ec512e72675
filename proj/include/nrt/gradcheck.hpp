// Copyright Contributors to the nrt Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "nrt/nn.hpp"
#include "nrt/tensor.hpp"

namespace nrt {

struct GradCheckEntry {
  std::string param;
  int64_t index;
  double analytic;
  double numeric;
  double rel_err;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  double mean_rel_err = 0.0;
  int64_t checked = 0;
  bool pass = false;
  GradCheckEntry worst;
};

struct GradCheckOptions {
  double step = 1e-5;          // central-difference half step
  double tolerance = 1e-4;     // max relative error allowed
  int64_t max_per_param = -1;  // <0: every element; otherwise a seeded subsample
  uint64_t sample_seed = 7;
};

// Compares reverse-mode gradients of loss_fn against central finite
// differences for each listed parameter. loss_fn must be deterministic: it
// is evaluated twice up front and must reproduce the loss bit-exactly.
// rel_err = |a - n| / max(1e-3, |a|, |n|).
GradCheckReport grad_check(const std::vector<Tensor>& params,
                           const std::function<Tensor()>& loss_fn,
                           const GradCheckOptions& opts = {});

}  // namespace nrt
