#pragma once

#include "bico/cloud.hpp"
#include "bico/error.hpp"
#include "bico/geom3d.hpp"
#include "bico/metrics.hpp"
#include "bico/rng.hpp"
#include "bico/simbench.hpp"
#include "bico/solver.hpp"
