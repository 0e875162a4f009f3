#pragma once

#include "kmetric/error.hpp"
#include "kmetric/random.hpp"
#include "kmetric/kernels.hpp"
#include "kmetric/kpca.hpp"
#include "kmetric/metric.hpp"
#include "kmetric/optimizer.hpp"
#include "kmetric/simulation.hpp"
#include "kmetric/io.hpp"
#include "kmetric/experiment.hpp"
