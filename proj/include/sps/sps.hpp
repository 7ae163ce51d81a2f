#pragma once

#include "sps/error.hpp"
#include "sps/clickstream.hpp"
#include "sps/qed.hpp"
#include "sps/simulator.hpp"
#include "sps/correlator.hpp"
#include "sps/qualifier.hpp"
#include "sps/config.hpp"
#include "sps/commands.hpp"
