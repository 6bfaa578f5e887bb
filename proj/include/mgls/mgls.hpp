#pragma once

#include "mgls/coordinator.hpp"
#include "mgls/data_io.hpp"
#include "mgls/lower_level.hpp"
#include "mgls/model.hpp"
#include "mgls/mpc.hpp"
#include "mgls/qp.hpp"
#include "mgls/upper_level.hpp"
#include "mgls/util.hpp"
