#pragma once

#include "servicemonitor/catalog.hpp"
#include "servicemonitor/error.hpp"
#include "servicemonitor/eval.hpp"
#include "servicemonitor/features.hpp"
#include "servicemonitor/forest.hpp"
#include "servicemonitor/label.hpp"
#include "servicemonitor/markov.hpp"
#include "servicemonitor/persist.hpp"
#include "servicemonitor/pipeline.hpp"
#include "servicemonitor/reduce.hpp"
#include "servicemonitor/syngen.hpp"
#include "servicemonitor/trace.hpp"
