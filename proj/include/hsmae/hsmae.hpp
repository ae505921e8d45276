#pragma once

#include "hsmae/alignment.hpp"
#include "hsmae/checkpoint.hpp"
#include "hsmae/common.hpp"
#include "hsmae/datacube.hpp"
#include "hsmae/layers.hpp"
#include "hsmae/metrics.hpp"
#include "hsmae/model.hpp"
#include "hsmae/patching.hpp"
#include "hsmae/sensors.hpp"
#include "hsmae/training.hpp"
