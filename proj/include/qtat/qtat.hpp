#pragma once

// Everything in one include.
#include "qtat/error.hpp"
#include "qtat/grid.hpp"
#include "qtat/geometry.hpp"
#include "qtat/expression.hpp"
#include "qtat/elliptic_operator.hpp"
#include "qtat/trace.hpp"
#include "qtat/field_io.hpp"
#include "qtat/norms.hpp"
#include "qtat/parallel.hpp"
#include "qtat/random.hpp"
#include "qtat/wave_forward.hpp"
#include "qtat/laplace_transform.hpp"
#include "qtat/parabolic_solver.hpp"
#include "qtat/qrm_solver.hpp"
#include "qtat/carleman.hpp"
#include "qtat/experiment.hpp"
#include "qtat/config.hpp"
