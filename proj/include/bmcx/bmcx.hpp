#pragma once

// Umbrella header: context-adaptive bridge-mode training across weight-space
// curves and planes, with a minimal reverse-mode tape underneath.

#include "bmcx/checkpoint.hpp"
#include "bmcx/config.hpp"
#include "bmcx/context.hpp"
#include "bmcx/curve.hpp"
#include "bmcx/data.hpp"
#include "bmcx/eval.hpp"
#include "bmcx/gradcheck.hpp"
#include "bmcx/model.hpp"
#include "bmcx/optim.hpp"
#include "bmcx/param_vector.hpp"
#include "bmcx/planar.hpp"
#include "bmcx/plot.hpp"
#include "bmcx/rng.hpp"
#include "bmcx/runner.hpp"
#include "bmcx/sweep.hpp"
#include "bmcx/tape.hpp"
#include "bmcx/tensor.hpp"
#include "bmcx/train.hpp"
