#pragma once

#include "kflow/errors.hpp"
#include "kflow/hermitian.hpp"
#include "kflow/geometry.hpp"
#include "kflow/fiber_flow.hpp"
#include "kflow/family_assembly.hpp"
#include "kflow/oracles.hpp"
#include "kflow/config.hpp"
#include "kflow/io.hpp"
#include "kflow/runner.hpp"
