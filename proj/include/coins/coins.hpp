#pragma once

#include "coins/cluster.hpp"
#include "coins/data.hpp"
#include "coins/errors.hpp"
#include "coins/eval.hpp"
#include "coins/losses.hpp"
#include "coins/matrix.hpp"
#include "coins/membership.hpp"
#include "coins/model.hpp"
#include "coins/numerics.hpp"
#include "coins/report.hpp"
#include "coins/rng.hpp"
#include "coins/theory.hpp"
#include "coins/trainer.hpp"
