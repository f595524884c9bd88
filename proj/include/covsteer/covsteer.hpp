#pragma once

#include "covsteer/conic.hpp"
#include "covsteer/dynamics.hpp"
#include "covsteer/io.hpp"
#include "covsteer/ipm.hpp"
#include "covsteer/irl1p.hpp"
#include "covsteer/matrix_utils.hpp"
#include "covsteer/model.hpp"
#include "covsteer/rng.hpp"
#include "covsteer/sdp.hpp"
#include "covsteer/sparsity.hpp"
#include "covsteer/stats.hpp"
