#pragma once

// Umbrella header.

#include "pwavg/version.hpp"
#include "pwavg/errors.hpp"
#include "pwavg/linalg.hpp"
#include "pwavg/expr.hpp"
#include "pwavg/toml.hpp"
#include "pwavg/model.hpp"
#include "pwavg/odeint.hpp"
#include "pwavg/averaging.hpp"
#include "pwavg/lsreduction.hpp"
#include "pwavg/roots.hpp"
#include "pwavg/verify.hpp"
#include "pwavg/examples.hpp"
