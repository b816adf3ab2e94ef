#pragma once

#include "evwsss/errors.hpp"
#include "evwsss/rng.hpp"
#include "evwsss/tensor.hpp"
#include "evwsss/image.hpp"
#include "evwsss/event_core.hpp"
#include "evwsss/labels.hpp"
#include "evwsss/synth_scene.hpp"
#include "evwsss/layers.hpp"
#include "evwsss/network.hpp"
#include "evwsss/supervision.hpp"
#include "evwsss/prototypes.hpp"
#include "evwsss/radam.hpp"
#include "evwsss/trainer.hpp"
#include "evwsss/config_io.hpp"
#include "evwsss/checkpoint.hpp"
#include "evwsss/dataset_io.hpp"
#include "evwsss/plot.hpp"
#include "evwsss/evaluator.hpp"
#include "evwsss/annotation.hpp"
