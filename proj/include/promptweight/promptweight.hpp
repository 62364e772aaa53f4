#pragma once

#include "baselines.hpp"
#include "dataset.hpp"
#include "error.hpp"
#include "evaluation.hpp"
#include "optimizer.hpp"
#include "parallel.hpp"
#include "prediction.hpp"
#include "pruning.hpp"
#include "rng.hpp"
