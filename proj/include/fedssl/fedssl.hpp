// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "fedssl/client.hpp"
#include "fedssl/config.hpp"
#include "fedssl/dataset.hpp"
#include "fedssl/diagnostics.hpp"
#include "fedssl/error.hpp"
#include "fedssl/experiment.hpp"
#include "fedssl/io.hpp"
#include "fedssl/mlp.hpp"
#include "fedssl/objective.hpp"
#include "fedssl/partition.hpp"
#include "fedssl/pseudo_label.hpp"
#include "fedssl/rng.hpp"
#include "fedssl/server.hpp"
#include "fedssl/simplex_oracle.hpp"
#include "fedssl/verify.hpp"
