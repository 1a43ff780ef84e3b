#pragma once

#include "svdscope/dtype.hpp"
#include "svdscope/error.hpp"
#include "svdscope/gauge.hpp"
#include "svdscope/generalpoints.hpp"
#include "svdscope/glob.hpp"
#include "svdscope/linalg.hpp"
#include "svdscope/parallel.hpp"
#include "svdscope/rng.hpp"
#include "svdscope/spectral.hpp"
#include "svdscope/surgery.hpp"
#include "svdscope/tensor_store.hpp"
#include "svdscope/version.hpp"
