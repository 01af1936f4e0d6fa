#pragma once

#include "impreg/dataset.hpp"
#include "impreg/error.hpp"
#include "impreg/gp_reg.hpp"
#include "impreg/lti_sysgen.hpp"
#include "impreg/metrics.hpp"
#include "impreg/model.hpp"
#include "impreg/nelder_mead.hpp"
#include "impreg/neuralreg.hpp"
#include "impreg/regls.hpp"
#include "impreg/training.hpp"
