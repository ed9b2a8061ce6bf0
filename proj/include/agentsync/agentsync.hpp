#pragma once

// Umbrella header for the whole library.

#include "agentsync/errors.hpp"
#include "agentsync/rng.hpp"
#include "agentsync/linalg.hpp"
#include "agentsync/expr.hpp"
#include "agentsync/graph.hpp"
#include "agentsync/leader.hpp"
#include "agentsync/plant.hpp"
#include "agentsync/observer.hpp"
#include "agentsync/control.hpp"
#include "agentsync/trace.hpp"
#include "agentsync/metrics.hpp"
#include "agentsync/engine.hpp"
#include "agentsync/scenario.hpp"
#include "agentsync/runner.hpp"
