#pragma once

#include "lipcert/model.hpp"
#include "lipcert/model_io.hpp"
#include "lipcert/forward_bounds.hpp"
#include "lipcert/jacobian_bounds.hpp"
#include "lipcert/bab.hpp"
#include "lipcert/oracle.hpp"
#include "lipcert/random_nets.hpp"
