#ifndef CRK_CRK_HPP
#define CRK_CRK_HPP

#include "crk/errors.hpp"
#include "crk/quantile_core.hpp"
#include "crk/randomization.hpp"
#include "crk/crk_within.hpp"
#include "crk/crk_between.hpp"
#include "crk/qdid.hpp"
#include "crk/sim_harness.hpp"
#include "crk/io.hpp"

#endif  // CRK_CRK_HPP
