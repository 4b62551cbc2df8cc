#pragma once

// Umbrella header for the chroma colorization toolkit.

#include "chroma/checkpoint.hpp"
#include "chroma/colorspace.hpp"
#include "chroma/config.hpp"
#include "chroma/dataset.hpp"
#include "chroma/errors.hpp"
#include "chroma/gradcheck.hpp"
#include "chroma/image_io.hpp"
#include "chroma/inference.hpp"
#include "chroma/network.hpp"
#include "chroma/ops.hpp"
#include "chroma/rng.hpp"
#include "chroma/tensor.hpp"
#include "chroma/training.hpp"
#include "chroma/verify.hpp"
