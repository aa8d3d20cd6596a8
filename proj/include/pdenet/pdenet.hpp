#pragma once

#include "pdenet/checkpoint.hpp"
#include "pdenet/commands.hpp"
#include "pdenet/config.hpp"
#include "pdenet/eval.hpp"
#include "pdenet/gating.hpp"
#include "pdenet/hsdata.hpp"
#include "pdenet/model.hpp"
#include "pdenet/ops.hpp"
#include "pdenet/synthetic.hpp"
#include "pdenet/tensor.hpp"
#include "pdenet/train.hpp"
