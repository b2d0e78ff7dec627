#pragma once

#include "hetfx/core.hpp"
#include "hetfx/tree.hpp"
#include "hetfx/normal.hpp"
#include "hetfx/mvn.hpp"
#include "hetfx/signed_rank.hpp"
#include "hetfx/joint_test.hpp"
#include "hetfx/binary.hpp"
#include "hetfx/bounds.hpp"
#include "hetfx/discovery.hpp"
#include "hetfx/cohort.hpp"
#include "hetfx/simlab.hpp"
