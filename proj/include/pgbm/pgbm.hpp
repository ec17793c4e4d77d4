#pragma once
// Umbrella header.
#include "boost.hpp"
#include "data.hpp"
#include "dist.hpp"
#include "error.hpp"
#include "loss.hpp"
#include "metrics.hpp"
#include "model_io.hpp"
#include "tree.hpp"
