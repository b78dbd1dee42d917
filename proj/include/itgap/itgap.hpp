#pragma once

#include "itgap/error.hpp"
#include "itgap/sparse_operator.hpp"
#include "itgap/log_scaled.hpp"
#include "itgap/operator_algebra.hpp"
#include "itgap/lattice_models.hpp"
#include "itgap/dense.hpp"
#include "itgap/imaginary_time.hpp"
#include "itgap/ed_oracle.hpp"
#include "itgap/gap_estimators.hpp"
