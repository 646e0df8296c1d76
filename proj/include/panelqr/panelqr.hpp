#pragma once

// Umbrella header for the estimation library. report.hpp is separate because
// it needs nlohmann/json.

#include "panelqr/bootstrap.hpp"
#include "panelqr/check_loss.hpp"
#include "panelqr/error.hpp"
#include "panelqr/io.hpp"
#include "panelqr/kernel_covariance.hpp"
#include "panelqr/panel.hpp"
#include "panelqr/parallel.hpp"
#include "panelqr/rng.hpp"
#include "panelqr/simulation.hpp"
#include "panelqr/solver.hpp"
#include "panelqr/stats.hpp"
