#pragma once

#include "branches.hpp"
#include "core.hpp"
#include "correct.hpp"
#include "graph.hpp"
#include "parallel.hpp"
#include "pipeline.hpp"
#include "propagate.hpp"
#include "rng.hpp"
#include "similarity.hpp"
#include "splitter.hpp"
#include "synth.hpp"
