#pragma once

#include "entfact/analysis.hpp"
#include "entfact/classifier.hpp"
#include "entfact/config.hpp"
#include "entfact/corpus.hpp"
#include "entfact/csv.hpp"
#include "entfact/dataset_io.hpp"
#include "entfact/error.hpp"
#include "entfact/features.hpp"
#include "entfact/metrics.hpp"
#include "entfact/policy.hpp"
#include "entfact/random.hpp"
#include "entfact/rltrain.hpp"
#include "entfact/scorer.hpp"
#include "entfact/synthetic.hpp"
#include "entfact/text.hpp"
