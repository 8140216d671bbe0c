#pragma once

#include "fclgan/conv.hpp"
#include "fclgan/data.hpp"
#include "fclgan/errors.hpp"
#include "fclgan/image.hpp"
#include "fclgan/ldcu.hpp"
#include "fclgan/losses.hpp"
#include "fclgan/metas.hpp"
#include "fclgan/metrics.hpp"
#include "fclgan/norm.hpp"
#include "fclgan/optim.hpp"
#include "fclgan/pfcu.hpp"
#include "fclgan/tensor.hpp"
#include "fclgan/training.hpp"
