/*
 * Copyright 2026 The gradleak Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

// Umbrella header.

#include "gradleak/tensor.hpp"
#include "gradleak/autodiff.hpp"
#include "gradleak/named_tensors.hpp"
#include "gradleak/rng.hpp"
#include "gradleak/models.hpp"
#include "gradleak/checkpoint.hpp"
#include "gradleak/lbfgs.hpp"
#include "gradleak/metrics.hpp"
#include "gradleak/attack.hpp"
#include "gradleak/defenses.hpp"
#include "gradleak/gradcheck.hpp"
#include "gradleak/harness/dataset.hpp"
#include "gradleak/harness/image_io.hpp"
#include "gradleak/harness/federation.hpp"
#include "gradleak/harness/config.hpp"
#include "gradleak/harness/scenario.hpp"
