// Copyright 2026 the dualglance authors
// SPDX-License-Identifier: Apache-2.0
//
// Umbrella header.
#pragma once

#include "dualglance/attention.hpp"
#include "dualglance/core.hpp"
#include "dualglance/data.hpp"
#include "dualglance/geometry.hpp"
#include "dualglance/harness.hpp"
#include "dualglance/image.hpp"
#include "dualglance/losses.hpp"
#include "dualglance/metrics.hpp"
#include "dualglance/model.hpp"
#include "dualglance/nn.hpp"
#include "dualglance/tensor.hpp"
#include "dualglance/version.hpp"
