#pragma once

#include "nsqcd/rng.hpp"
#include "nsqcd/models.hpp"
#include "nsqcd/growth.hpp"
#include "nsqcd/detectors.hpp"
#include "nsqcd/calibration.hpp"
#include "nsqcd/montecarlo.hpp"
#include "nsqcd/epidata.hpp"
