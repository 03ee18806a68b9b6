#pragma once

// Umbrella header for the latent-EnKF library.

#include "lenkf/common.hpp"
#include "lenkf/rng.hpp"
#include "lenkf/tensor_io.hpp"

#include "lenkf/systems/adr.hpp"
#include "lenkf/systems/dataset.hpp"
#include "lenkf/systems/integrate.hpp"
#include "lenkf/systems/lorenz96.hpp"
#include "lenkf/systems/observation.hpp"
#include "lenkf/systems/toy.hpp"

#include "lenkf/nn/adam.hpp"
#include "lenkf/nn/network.hpp"
#include "lenkf/nn/spectral.hpp"

#include "lenkf/lae/delay.hpp"
#include "lenkf/lae/model.hpp"
#include "lenkf/lae/normalization.hpp"
#include "lenkf/lae/train.hpp"

#include "lenkf/metrics/metrics.hpp"

#include "lenkf/filters/enkf.hpp"
#include "lenkf/filters/ensemble.hpp"
#include "lenkf/filters/init_ensemble.hpp"
#include "lenkf/filters/latent.hpp"
#include "lenkf/filters/result.hpp"
#include "lenkf/filters/taper.hpp"

#include "lenkf/harness/config.hpp"
#include "lenkf/harness/experiment.hpp"
