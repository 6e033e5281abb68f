#pragma once

#include "vitpad/data.hpp"
#include "vitpad/errors.hpp"
#include "vitpad/explain.hpp"
#include "vitpad/gradcheck.hpp"
#include "vitpad/image.hpp"
#include "vitpad/metrics.hpp"
#include "vitpad/preprocess.hpp"
#include "vitpad/tape.hpp"
#include "vitpad/tensor.hpp"
#include "vitpad/train.hpp"
#include "vitpad/vit.hpp"
#include "vitpad/weights_io.hpp"
