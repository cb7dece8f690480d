#pragma once

#include "shan/error.hpp"
#include "shan/rng.hpp"
#include "shan/tensor.hpp"
#include "shan/autodiff.hpp"
#include "shan/ops.hpp"
#include "shan/layers.hpp"
#include "shan/attention.hpp"
#include "shan/blocks.hpp"
#include "shan/network.hpp"
#include "shan/hazegen.hpp"
#include "shan/metrics.hpp"
#include "shan/training.hpp"
#include "shan/io.hpp"
#include "shan/cost.hpp"
#include "shan/gradcheck.hpp"
#include "shan/ablation.hpp"
