#pragma once

#include "deblurdiff/autodiff.hpp"
#include "deblurdiff/blur_synth.hpp"
#include "deblurdiff/codec.hpp"
#include "deblurdiff/config.hpp"
#include "deblurdiff/diffusion.hpp"
#include "deblurdiff/eac.hpp"
#include "deblurdiff/gradcheck.hpp"
#include "deblurdiff/gradsuite.hpp"
#include "deblurdiff/image_io.hpp"
#include "deblurdiff/lkpn.hpp"
#include "deblurdiff/metrics.hpp"
#include "deblurdiff/ops.hpp"
#include "deblurdiff/optim.hpp"
#include "deblurdiff/rng.hpp"
#include "deblurdiff/tensor.hpp"
#include "deblurdiff/training.hpp"
#include "deblurdiff/unet.hpp"
