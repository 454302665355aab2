#pragma once

#include "deeprnmt/checkpoint.hpp"
#include "deeprnmt/config.hpp"
#include "deeprnmt/decoder.hpp"
#include "deeprnmt/encoder.hpp"
#include "deeprnmt/eval.hpp"
#include "deeprnmt/gradcheck.hpp"
#include "deeprnmt/log.hpp"
#include "deeprnmt/model.hpp"
#include "deeprnmt/tasks.hpp"
#include "deeprnmt/tensor.hpp"
#include "deeprnmt/train.hpp"
