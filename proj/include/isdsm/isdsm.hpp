#pragma once

#include "isdsm/branching.hpp"
#include "isdsm/config.hpp"
#include "isdsm/errors.hpp"
#include "isdsm/experiments.hpp"
#include "isdsm/flow.hpp"
#include "isdsm/grid.hpp"
#include "isdsm/io.hpp"
#include "isdsm/kernel.hpp"
#include "isdsm/localtime.hpp"
#include "isdsm/measures.hpp"
#include "isdsm/parallel.hpp"
#include "isdsm/rates.hpp"
#include "isdsm/rcbm.hpp"
#include "isdsm/rng.hpp"
#include "isdsm/stats.hpp"
#include "isdsm/superprocess.hpp"
#include "isdsm/svg.hpp"
#include "isdsm/verify.hpp"
