#pragma once

// Everything at once.

#include "backbone.hpp"
#include "core.hpp"
#include "csv.hpp"
#include "datagen.hpp"
#include "dynamics.hpp"
#include "experiments.hpp"
#include "pipeline.hpp"
#include "plabelers.hpp"
#include "random.hpp"
#include "selectors.hpp"
#include "stats.hpp"
