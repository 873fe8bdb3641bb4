#pragma once

#include "ahmf/tensor.hpp"
#include "ahmf/random.hpp"
#include "ahmf/parallel.hpp"
#include "ahmf/ops.hpp"
#include "ahmf/resample.hpp"
#include "ahmf/config.hpp"
#include "ahmf/nn_blocks.hpp"
#include "ahmf/model.hpp"
#include "ahmf/image_io.hpp"
#include "ahmf/data.hpp"
#include "ahmf/checkpoint.hpp"
#include "ahmf/trainer.hpp"
#include "ahmf/evaluator.hpp"
#include "ahmf/gradcheck.hpp"
