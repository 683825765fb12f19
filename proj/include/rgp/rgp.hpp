#pragma once

#include "rgp/bound.hpp"
#include "rgp/data.hpp"
#include "rgp/errors.hpp"
#include "rgp/experiment.hpp"
#include "rgp/gpnarx.hpp"
#include "rgp/kernel.hpp"
#include "rgp/model.hpp"
#include "rgp/optimizer.hpp"
#include "rgp/predictor.hpp"
#include "rgp/psi_stats.hpp"
#include "rgp/recognition.hpp"
#include "rgp/serialization.hpp"
#include "rgp/trainer.hpp"
