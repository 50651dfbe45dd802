#pragma once

#include "marginfit/constraint.hpp"
#include "marginfit/covariate.hpp"
#include "marginfit/errors.hpp"
#include "marginfit/likelihood.hpp"
#include "marginfit/mllp.hpp"
#include "marginfit/penalty.hpp"
#include "marginfit/solver.hpp"
#include "marginfit/table.hpp"
#include "marginfit/types.hpp"
