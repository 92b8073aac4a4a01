#pragma once

#include "wmocr/attack.hpp"
#include "wmocr/charset.hpp"
#include "wmocr/config.hpp"
#include "wmocr/ctc.hpp"
#include "wmocr/filters.hpp"
#include "wmocr/gradcheck.hpp"
#include "wmocr/harness.hpp"
#include "wmocr/image.hpp"
#include "wmocr/inpaint.hpp"
#include "wmocr/jpeg.hpp"
#include "wmocr/layers.hpp"
#include "wmocr/metrics.hpp"
#include "wmocr/model.hpp"
#include "wmocr/tensor.hpp"
#include "wmocr/textgen.hpp"
#include "wmocr/train.hpp"
#include "wmocr/weights_io.hpp"
