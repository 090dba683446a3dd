#pragma once

#include "hqsvc/audio.hpp"
#include "hqsvc/checkpoint.hpp"
#include "hqsvc/common.hpp"
#include "hqsvc/config.hpp"
#include "hqsvc/corpus.hpp"
#include "hqsvc/ddsp.hpp"
#include "hqsvc/diffusion.hpp"
#include "hqsvc/dsp_ops.hpp"
#include "hqsvc/eva.hpp"
#include "hqsvc/features.hpp"
#include "hqsvc/fft.hpp"
#include "hqsvc/losses.hpp"
#include "hqsvc/metrics.hpp"
#include "hqsvc/model.hpp"
#include "hqsvc/nn.hpp"
#include "hqsvc/ops.hpp"
#include "hqsvc/optim.hpp"
#include "hqsvc/pipeline.hpp"
#include "hqsvc/spectral.hpp"
#include "hqsvc/tensor.hpp"
#include "hqsvc/train.hpp"
