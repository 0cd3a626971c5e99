#pragma once

#include "covkl/divergence.hpp"
#include "covkl/errors.hpp"
#include "covkl/harness/config.hpp"
#include "covkl/harness/experiment.hpp"
#include "covkl/harness/report.hpp"
#include "covkl/linalg.hpp"
#include "covkl/matrix_io.hpp"
#include "covkl/optimize.hpp"
#include "covkl/quadrature.hpp"
#include "covkl/rng.hpp"
#include "covkl/running_stats.hpp"
#include "covkl/sampling.hpp"
