// Copyright 2026 the dualglance authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

namespace dualglance {

inline constexpr const char* kVersion = "dualglance 0.1.0";

}  // namespace dualglance
