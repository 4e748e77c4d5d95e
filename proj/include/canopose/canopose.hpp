#pragma once

// Umbrella header.

#include "canopose/body_model.hpp"
#include "canopose/camera.hpp"
#include "canopose/cli.hpp"
#include "canopose/config_io.hpp"
#include "canopose/fitting.hpp"
#include "canopose/json_util.hpp"
#include "canopose/keypoint_jacobian.hpp"
#include "canopose/least_squares.hpp"
#include "canopose/metrics.hpp"
#include "canopose/model_io.hpp"
#include "canopose/observations.hpp"
#include "canopose/params.hpp"
#include "canopose/procrustes.hpp"
#include "canopose/result_io.hpp"
#include "canopose/rotations.hpp"
#include "canopose/scene_io.hpp"
#include "canopose/synth.hpp"
#include "canopose/toy_model.hpp"
#include "canopose/types.hpp"
#include "canopose/version.hpp"
