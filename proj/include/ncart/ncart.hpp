#pragma once

#include "ncart/control.hpp"
#include "ncart/dataset.hpp"
#include "ncart/erasure.hpp"
#include "ncart/error.hpp"
#include "ncart/heatmap.hpp"
#include "ncart/numerics.hpp"
#include "ncart/probe.hpp"
#include "ncart/ranking.hpp"
#include "ncart/report.hpp"
#include "ncart/synth.hpp"
