#pragma once

// Umbrella header for the core library (no HTTP dependency).
#include "dhedge/chi_square.hpp"
#include "dhedge/csv.hpp"
#include "dhedge/environment.hpp"
#include "dhedge/evaluation.hpp"
#include "dhedge/fitting.hpp"
#include "dhedge/heuristic.hpp"
#include "dhedge/label.hpp"
#include "dhedge/learners.hpp"
#include "dhedge/parallel.hpp"
#include "dhedge/rng.hpp"
#include "dhedge/series.hpp"
#include "dhedge/session.hpp"
#include "dhedge/storage.hpp"
