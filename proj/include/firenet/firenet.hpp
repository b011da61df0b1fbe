#pragma once

#include "firenet/alert.hpp"
#include "firenet/content_hash.hpp"
#include "firenet/dataio.hpp"
#include "firenet/fusion.hpp"
#include "firenet/image.hpp"
#include "firenet/inference.hpp"
#include "firenet/kernels.hpp"
#include "firenet/model_io.hpp"
#include "firenet/network.hpp"
#include "firenet/optimizer.hpp"
#include "firenet/tensor.hpp"
#include "firenet/training.hpp"
