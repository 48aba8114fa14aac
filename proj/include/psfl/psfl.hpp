#pragma once

#include "psfl/clustering.hpp"
#include "psfl/config.hpp"
#include "psfl/core.hpp"
#include "psfl/data.hpp"
#include "psfl/engine.hpp"
#include "psfl/frequency.hpp"
#include "psfl/model.hpp"
#include "psfl/telemetry.hpp"
