#pragma once

#include "oscgmrf/cholesky.hpp"
#include "oscgmrf/error.hpp"
#include "oscgmrf/fem.hpp"
#include "oscgmrf/inference.hpp"
#include "oscgmrf/matrix_market.hpp"
#include "oscgmrf/mesh.hpp"
#include "oscgmrf/model.hpp"
#include "oscgmrf/observations.hpp"
#include "oscgmrf/precision.hpp"
#include "oscgmrf/rng.hpp"
#include "oscgmrf/sampler.hpp"
#include "oscgmrf/simulate.hpp"
#include "oscgmrf/spectra.hpp"
#include "oscgmrf/types.hpp"
