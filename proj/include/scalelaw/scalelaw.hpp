#pragma once

#include "scalelaw/algebra.hpp"
#include "scalelaw/analysis.hpp"
#include "scalelaw/baselines.hpp"
#include "scalelaw/data.hpp"
#include "scalelaw/errors.hpp"
#include "scalelaw/fit.hpp"
#include "scalelaw/fixtures.hpp"
#include "scalelaw/forms.hpp"
#include "scalelaw/io.hpp"
#include "scalelaw/mbnsl.hpp"
#include "scalelaw/metrics.hpp"
#include "scalelaw/wiring.hpp"
