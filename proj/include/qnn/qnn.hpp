#pragma once

#include "qnn/error.hpp"
#include "qnn/linalg.hpp"
#include "qnn/network.hpp"
#include "qnn/training.hpp"
#include "qnn/decomposition.hpp"
#include "qnn/analysis.hpp"
#include "qnn/sysid.hpp"
#include "qnn/polynomial.hpp"
#include "qnn/sos.hpp"
#include "qnn/control.hpp"
#include "qnn/data_io.hpp"
#include "qnn/pipelines.hpp"
