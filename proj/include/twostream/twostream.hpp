#pragma once

#include "twostream/checkpoint.hpp"
#include "twostream/data.hpp"
#include "twostream/encoder.hpp"
#include "twostream/errors.hpp"
#include "twostream/eval.hpp"
#include "twostream/losses.hpp"
#include "twostream/queue.hpp"
#include "twostream/random.hpp"
#include "twostream/tensor.hpp"
#include "twostream/trainer.hpp"
