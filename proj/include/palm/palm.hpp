#pragma once

// Umbrella header.

#include "palm/avatar.hpp"
#include "palm/camera.hpp"
#include "palm/checkpoint.hpp"
#include "palm/common.hpp"
#include "palm/config.hpp"
#include "palm/dataset.hpp"
#include "palm/diffops.hpp"
#include "palm/diffrender.hpp"
#include "palm/embed.hpp"
#include "palm/geometry.hpp"
#include "palm/image_io.hpp"
#include "palm/inference.hpp"
#include "palm/losses.hpp"
#include "palm/mesh_io.hpp"
#include "palm/metrics.hpp"
#include "palm/neural.hpp"
#include "palm/optimizer.hpp"
#include "palm/raster.hpp"
#include "palm/rig.hpp"
#include "palm/sh.hpp"
#include "palm/tensor.hpp"
#include "palm/train.hpp"
