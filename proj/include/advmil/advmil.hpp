// Umbrella header.
#pragma once

#include "advmil/autodiff.hpp"
#include "advmil/checkpoint.hpp"
#include "advmil/config.hpp"
#include "advmil/core_data.hpp"
#include "advmil/discriminator.hpp"
#include "advmil/evaluation.hpp"
#include "advmil/generator.hpp"
#include "advmil/losses.hpp"
#include "advmil/nn.hpp"
#include "advmil/patching.hpp"
#include "advmil/plot.hpp"
#include "advmil/prepared_bag.hpp"
#include "advmil/runtime.hpp"
#include "advmil/synthetic_cohort.hpp"
#include "advmil/trainer.hpp"
