#pragma once

#include "mcdu/agglomerative.hpp"
#include "mcdu/calibration.hpp"
#include "mcdu/clustering.hpp"
#include "mcdu/core.hpp"
#include "mcdu/error.hpp"
#include "mcdu/evaluation.hpp"
#include "mcdu/ingest.hpp"
#include "mcdu/kde.hpp"
#include "mcdu/mixture.hpp"
#include "mcdu/report.hpp"
#include "mcdu/synth.hpp"
