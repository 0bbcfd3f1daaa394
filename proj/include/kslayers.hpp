#pragma once

#include "kslayers/errors.hpp"
#include "kslayers/specfun.hpp"
#include "kslayers/linalg.hpp"
#include "kslayers/ode.hpp"
#include "kslayers/greens.hpp"
#include "kslayers/nondegen.hpp"
#include "kslayers/profile.hpp"
#include "kslayers/ansatz.hpp"
#include "kslayers/analysis.hpp"
#include "kslayers/bvp.hpp"
#include "kslayers/io.hpp"
