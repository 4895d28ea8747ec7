#pragma once

#include "lmw/error.hpp"
#include "lmw/dataset.hpp"
#include "lmw/formula.hpp"
#include "lmw/linalg.hpp"
#include "lmw/weights.hpp"
#include "lmw/estimation.hpp"
#include "lmw/diagnostics.hpp"
#include "lmw/oracle.hpp"
#include "lmw/companion.hpp"
#include "lmw/report.hpp"
