#pragma once

#include "adrpo/advantage.hpp"
#include "adrpo/assignment.hpp"
#include "adrpo/checkpoint.hpp"
#include "adrpo/config.hpp"
#include "adrpo/distributions.hpp"
#include "adrpo/error.hpp"
#include "adrpo/experiment.hpp"
#include "adrpo/flowmatch.hpp"
#include "adrpo/fmtrain.hpp"
#include "adrpo/metrics.hpp"
#include "adrpo/netcore.hpp"
#include "adrpo/pgtrain.hpp"
#include "adrpo/rng.hpp"
#include "adrpo/svg.hpp"
