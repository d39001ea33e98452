#pragma once

#include "krawdetect/attacks.hpp"
#include "krawdetect/config.hpp"
#include "krawdetect/detector.hpp"
#include "krawdetect/error.hpp"
#include "krawdetect/features.hpp"
#include "krawdetect/harness.hpp"
#include "krawdetect/image.hpp"
#include "krawdetect/image_io.hpp"
#include "krawdetect/keyed_selection.hpp"
#include "krawdetect/krawtchouk.hpp"
#include "krawdetect/metrics.hpp"
#include "krawdetect/parallel.hpp"
#include "krawdetect/selftest.hpp"
#include "krawdetect/svm.hpp"
#include "krawdetect/synthetic_digits.hpp"
