#pragma once

#include "perfusion/errors.hpp"
#include "perfusion/jet.hpp"
#include "perfusion/model.hpp"
#include "perfusion/ode_oracle.hpp"
#include "perfusion/ingest.hpp"
#include "perfusion/fitter.hpp"
#include "perfusion/signature.hpp"
#include "perfusion/gbdt.hpp"
#include "perfusion/classify.hpp"
#include "perfusion/synth.hpp"
#include "perfusion/config.hpp"
#include "perfusion/pipeline.hpp"
#include "perfusion/report.hpp"
