#pragma once

#include "pfvb/data.hpp"
#include "pfvb/diagnostics.hpp"
#include "pfvb/error.hpp"
#include "pfvb/io.hpp"
#include "pfvb/kernel.hpp"
#include "pfvb/mean_field.hpp"
#include "pfvb/partial_factorized.hpp"
#include "pfvb/rng.hpp"
#include "pfvb/truncnorm.hpp"
