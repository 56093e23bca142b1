#pragma once

// Umbrella header.

#include "rapgen/autodiff.hpp"
#include "rapgen/bench.hpp"
#include "rapgen/cfm.hpp"
#include "rapgen/checkpoint.hpp"
#include "rapgen/cli.hpp"
#include "rapgen/common.hpp"
#include "rapgen/config.hpp"
#include "rapgen/featurization.hpp"
#include "rapgen/io.hpp"
#include "rapgen/lm.hpp"
#include "rapgen/lyrics.hpp"
#include "rapgen/metrics.hpp"
#include "rapgen/nn.hpp"
#include "rapgen/rapbank.hpp"
#include "rapgen/refenc.hpp"
#include "rapgen/spectral.hpp"
#include "rapgen/types.hpp"
