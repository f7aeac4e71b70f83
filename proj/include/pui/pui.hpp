#pragma once

#include "pui/anchor_store.hpp"
#include "pui/cohort.hpp"
#include "pui/counterfactual.hpp"
#include "pui/cox.hpp"
#include "pui/csv.hpp"
#include "pui/dag.hpp"
#include "pui/error.hpp"
#include "pui/evaluation.hpp"
#include "pui/formula.hpp"
#include "pui/models.hpp"
#include "pui/service.hpp"
#include "pui/spline.hpp"
#include "pui/synth.hpp"
#include "pui/timeline.hpp"
