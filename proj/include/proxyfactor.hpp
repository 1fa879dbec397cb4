#pragma once

#include "proxyfactor/core.hpp"
#include "proxyfactor/data_io.hpp"
#include "proxyfactor/factor_estimation.hpp"
#include "proxyfactor/forecast.hpp"
#include "proxyfactor/multi_index.hpp"
#include "proxyfactor/robust_regression.hpp"
#include "proxyfactor/sieve_basis.hpp"
#include "proxyfactor/simulation.hpp"
#include "proxyfactor/specification_test.hpp"

namespace proxyfactor {

inline constexpr const char* version = "0.1.0";

}  // namespace proxyfactor
