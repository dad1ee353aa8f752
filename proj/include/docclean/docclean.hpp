#pragma once

#include "docclean/background.hpp"
#include "docclean/cleaning.hpp"
#include "docclean/common.hpp"
#include "docclean/features.hpp"
#include "docclean/image_io.hpp"
#include "docclean/inference.hpp"
#include "docclean/learning.hpp"
#include "docclean/matching.hpp"
#include "docclean/model.hpp"
#include "docclean/raster.hpp"
#include "docclean/report_io.hpp"
#include "docclean/serialization.hpp"
#include "docclean/synthgen.hpp"
