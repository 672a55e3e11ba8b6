#pragma once

// Umbrella header for the whole DreamText training pipeline.

#include "dreamtext/rng.hpp"
#include "dreamtext/tensor.hpp"
#include "dreamtext/optim.hpp"
#include "dreamtext/io.hpp"
#include "dreamtext/glyphdata.hpp"
#include "dreamtext/textenc.hpp"
#include "dreamtext/denoiser.hpp"
#include "dreamtext/maskops.hpp"
#include "dreamtext/losses.hpp"
#include "dreamtext/config.hpp"
#include "dreamtext/model.hpp"
#include "dreamtext/checkpoint.hpp"
#include "dreamtext/eval.hpp"
#include "dreamtext/trainer.hpp"
