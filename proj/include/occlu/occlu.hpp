#pragma once

#include "occlu/numerics/tensor.hpp"
#include "occlu/numerics/ops.hpp"
#include "occlu/numerics/batch_norm.hpp"
#include "occlu/numerics/finite_diff.hpp"
#include "occlu/numerics/layers.hpp"
#include "occlu/numerics/optim.hpp"
#include "occlu/numerics/random.hpp"
#include "occlu/occlusion/mask.hpp"
#include "occlu/mae/transformer.hpp"
#include "occlu/mae/mae.hpp"
#include "occlu/augraph/backbone.hpp"
#include "occlu/augraph/head.hpp"
#include "occlu/augraph/losses.hpp"
#include "occlu/distill/distill.hpp"
#include "occlu/harness/config.hpp"
#include "occlu/harness/dataset.hpp"
#include "occlu/harness/checkpoint.hpp"
#include "occlu/harness/metrics.hpp"
#include "occlu/harness/complexity.hpp"
#include "occlu/harness/models.hpp"
#include "occlu/harness/training.hpp"
#include "occlu/harness/report.hpp"
