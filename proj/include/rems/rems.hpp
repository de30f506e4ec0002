#pragma once

// Umbrella header for the REMS skeleton action recognition library.
#include "rems/binio.hpp"
#include "rems/class_names.hpp"
#include "rems/dataset.hpp"
#include "rems/error.hpp"
#include "rems/eval.hpp"
#include "rems/indrnn.hpp"
#include "rems/indrnn_train.hpp"
#include "rems/model_io.hpp"
#include "rems/rng.hpp"
#include "rems/skeleton.hpp"
#include "rems/skf.hpp"
#include "rems/streaming.hpp"
#include "rems/synth.hpp"
