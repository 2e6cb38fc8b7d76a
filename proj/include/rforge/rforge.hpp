#pragma once

#include "rforge/autodiff.hpp"
#include "rforge/config.hpp"
#include "rforge/dataset.hpp"
#include "rforge/error.hpp"
#include "rforge/evaluation.hpp"
#include "rforge/fpenv.hpp"
#include "rforge/metrics.hpp"
#include "rforge/models.hpp"
#include "rforge/objective.hpp"
#include "rforge/optim.hpp"
#include "rforge/phantom.hpp"
#include "rforge/relevance.hpp"
#include "rforge/rng.hpp"
#include "rforge/slic3d.hpp"
#include "rforge/tensor.hpp"
#include "rforge/training.hpp"
#include "rforge/volume.hpp"
