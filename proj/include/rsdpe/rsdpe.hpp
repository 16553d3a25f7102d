#pragma once

#include "rsdpe/approximation.hpp"
#include "rsdpe/cli.hpp"
#include "rsdpe/common.hpp"
#include "rsdpe/config_io.hpp"
#include "rsdpe/default_state.hpp"
#include "rsdpe/dpe_solver.hpp"
#include "rsdpe/generator.hpp"
#include "rsdpe/hamiltonian.hpp"
#include "rsdpe/matrix_exp.hpp"
#include "rsdpe/model.hpp"
#include "rsdpe/rng.hpp"
#include "rsdpe/simulation.hpp"
#include "rsdpe/solution_io.hpp"
#include "rsdpe/strategy.hpp"
