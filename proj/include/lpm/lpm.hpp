#pragma once

#include "lpm/analysis.hpp"
#include "lpm/checkpoint.hpp"
#include "lpm/common.hpp"
#include "lpm/data.hpp"
#include "lpm/eval.hpp"
#include "lpm/model.hpp"
#include "lpm/netinfer.hpp"
#include "lpm/scale_study.hpp"
#include "lpm/synth.hpp"
#include "lpm/train.hpp"
