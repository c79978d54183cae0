// Copyright Contributors to the msfa-forge project.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "msfa/core.hpp"
#include "msfa/error.hpp"
#include "msfa/eval.hpp"
#include "msfa/io.hpp"
#include "msfa/mosaic.hpp"
#include "msfa/optimizer.hpp"
#include "msfa/parallel.hpp"
#include "msfa/random.hpp"
#include "msfa/stats.hpp"
#include "msfa/wiener.hpp"
