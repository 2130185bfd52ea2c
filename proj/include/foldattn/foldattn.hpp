#pragma once

#include "foldattn/tensor.hpp"
#include "foldattn/random.hpp"
#include "foldattn/attention.hpp"
#include "foldattn/folding.hpp"
#include "foldattn/streaming.hpp"
#include "foldattn/backward.hpp"
#include "foldattn/gradcheck.hpp"
#include "foldattn/toy.hpp"
#include "foldattn/cost_model.hpp"
#include "foldattn/config.hpp"
#include "foldattn/grid.hpp"
#include "foldattn/verify.hpp"
