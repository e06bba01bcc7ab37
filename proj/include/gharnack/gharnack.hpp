#pragma once

#include "gharnack/box.hpp"
#include "gharnack/control.hpp"
#include "gharnack/coupling.hpp"
#include "gharnack/drift_expr.hpp"
#include "gharnack/driving.hpp"
#include "gharnack/errors.hpp"
#include "gharnack/gparams.hpp"
#include "gharnack/hamiltonian.hpp"
#include "gharnack/hjb.hpp"
#include "gharnack/quadrature.hpp"
#include "gharnack/rng.hpp"
#include "gharnack/stats.hpp"
#include "gharnack/time_grid.hpp"
#include "gharnack/verify.hpp"
