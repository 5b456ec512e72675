// Copyright Contributors to the nrt Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "nrt/nn.hpp"

namespace nrt {

// Binary checkpoint: magic+version header, parameter count, then one record
// per parameter (name, extents, raw little-endian float64 payload). Loads
// are matched by name and must cover every registered parameter with
// identical shapes. Round trips are bit-exact.
void save_checkpoint(const std::string& path, const nn::ParamRegistry& reg);
void load_checkpoint(const std::string& path, nn::ParamRegistry& reg);

}  // namespace nrt
