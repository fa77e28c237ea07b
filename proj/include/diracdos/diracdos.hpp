#pragma once

#include "diracdos/common.hpp"
#include "diracdos/jet.hpp"
#include "diracdos/operator_core.hpp"
#include "diracdos/disorder.hpp"
#include "diracdos/spectral.hpp"
#include "diracdos/models.hpp"
#include "diracdos/hs_calculus.hpp"
#include "diracdos/estimates.hpp"
#include "diracdos/dos.hpp"
