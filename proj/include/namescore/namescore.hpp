#pragma once

#include "namescore/charcnn.hpp"
#include "namescore/cluster.hpp"
#include "namescore/corpus.hpp"
#include "namescore/evaluate.hpp"
#include "namescore/features.hpp"
#include "namescore/fusion.hpp"
#include "namescore/linear.hpp"
#include "namescore/numkit/layers.hpp"
#include "namescore/numkit/params.hpp"
#include "namescore/numkit/tensor.hpp"
