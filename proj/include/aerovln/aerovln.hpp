#pragma once

#include "aerovln/action.hpp"
#include "aerovln/dataset.hpp"
#include "aerovln/error.hpp"
#include "aerovln/eval.hpp"
#include "aerovln/geometry.hpp"
#include "aerovln/instructions.hpp"
#include "aerovln/keyframe.hpp"
#include "aerovln/landmark.hpp"
#include "aerovln/occupancy.hpp"
#include "aerovln/pipeline.hpp"
#include "aerovln/scene.hpp"
#include "aerovln/segmentation.hpp"
#include "aerovln/strings.hpp"
#include "aerovln/text.hpp"
#include "aerovln/trajgen.hpp"
#include "aerovln/vlm.hpp"
