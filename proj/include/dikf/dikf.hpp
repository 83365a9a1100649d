#pragma once

#include "dikf/constraints.hpp"
#include "dikf/errors.hpp"
#include "dikf/eval.hpp"
#include "dikf/experiment.hpp"
#include "dikf/filter.hpp"
#include "dikf/io.hpp"
#include "dikf/model.hpp"
#include "dikf/scheduler.hpp"
#include "dikf/synth.hpp"
