// Copyright (C) 2026 The adaattn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "adaattn/core/elementwise.hpp"
#include "adaattn/core/error.hpp"
#include "adaattn/core/linalg.hpp"
#include "adaattn/core/moments.hpp"
#include "adaattn/core/random.hpp"
#include "adaattn/core/spatial.hpp"
#include "adaattn/core/stats.hpp"
#include "adaattn/core/tensor.hpp"
