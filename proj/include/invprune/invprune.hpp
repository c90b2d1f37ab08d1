#pragma once

#include "invprune/augment.hpp"
#include "invprune/checkpoint.hpp"
#include "invprune/config.hpp"
#include "invprune/data.hpp"
#include "invprune/loss.hpp"
#include "invprune/mask.hpp"
#include "invprune/metrics.hpp"
#include "invprune/network.hpp"
#include "invprune/optim.hpp"
#include "invprune/pipeline.hpp"
#include "invprune/prune.hpp"
#include "invprune/rng.hpp"
#include "invprune/tensor.hpp"
