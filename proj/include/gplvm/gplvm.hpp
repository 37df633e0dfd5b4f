#pragma once

// Umbrella header for the uncertainty-quantification library: latent-variable
// models over random-feature Gaussian processes with Monte Carlo
// epistemic/aleatoric variance decomposition.

#include "gplvm/errors.hpp"
#include "gplvm/numkit.hpp"
#include "gplvm/rff.hpp"
#include "gplvm/blr.hpp"
#include "gplvm/latent.hpp"
#include "gplvm/uq.hpp"
#include "gplvm/synthgen.hpp"
#include "gplvm/harness.hpp"
