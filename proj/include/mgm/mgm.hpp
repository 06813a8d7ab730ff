#pragma once

#include "mgm/adam.hpp"
#include "mgm/autodiff.hpp"
#include "mgm/distributions.hpp"
#include "mgm/early_stopping.hpp"
#include "mgm/encoder.hpp"
#include "mgm/error.hpp"
#include "mgm/experiment.hpp"
#include "mgm/fusion.hpp"
#include "mgm/graph.hpp"
#include "mgm/log.hpp"
#include "mgm/memory.hpp"
#include "mgm/metrics.hpp"
#include "mgm/model.hpp"
#include "mgm/rng.hpp"
#include "mgm/splits.hpp"
#include "mgm/synth.hpp"
#include "mgm/tensor.hpp"
