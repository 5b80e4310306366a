#pragma once

#include "gmmrisk/backtest.hpp"
#include "gmmrisk/baselines.hpp"
#include "gmmrisk/engine.hpp"
#include "gmmrisk/error.hpp"
#include "gmmrisk/fit_quality.hpp"
#include "gmmrisk/gmm.hpp"
#include "gmmrisk/io.hpp"
#include "gmmrisk/random.hpp"
#include "gmmrisk/risk.hpp"
#include "gmmrisk/scenario.hpp"
#include "gmmrisk/special.hpp"
#include "gmmrisk/timeseries.hpp"
