#pragma once

#include "slmr/detect.hpp"
#include "slmr/errors.hpp"
#include "slmr/layers.hpp"
#include "slmr/masking.hpp"
#include "slmr/model.hpp"
#include "slmr/pipeline.hpp"
#include "slmr/rng.hpp"
#include "slmr/run_config.hpp"
#include "slmr/tensor.hpp"
