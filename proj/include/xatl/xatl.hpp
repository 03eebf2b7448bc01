// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "xatl/error.hpp"
#include "xatl/tensor.hpp"
#include "xatl/autograd.hpp"
#include "xatl/kernels.hpp"
#include "xatl/ops.hpp"
#include "xatl/config.hpp"
#include "xatl/params.hpp"
#include "xatl/blocks.hpp"
#include "xatl/model.hpp"
#include "xatl/transfer.hpp"
#include "xatl/optim.hpp"
#include "xatl/data.hpp"
#include "xatl/checkpoint.hpp"
#include "xatl/train.hpp"
#include "xatl/grad_check.hpp"
#include "xatl/verify.hpp"
