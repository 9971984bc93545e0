#pragma once

// Umbrella header.

#include "firegan/autograd.hpp"
#include "firegan/checkpoint.hpp"
#include "firegan/cli.hpp"
#include "firegan/config.hpp"
#include "firegan/conv.hpp"
#include "firegan/data.hpp"
#include "firegan/errors.hpp"
#include "firegan/evaluation.hpp"
#include "firegan/image.hpp"
#include "firegan/io.hpp"
#include "firegan/log.hpp"
#include "firegan/losses.hpp"
#include "firegan/metrics.hpp"
#include "firegan/model.hpp"
#include "firegan/ops.hpp"
#include "firegan/optim.hpp"
#include "firegan/random.hpp"
#include "firegan/tensor.hpp"
#include "firegan/training.hpp"
