#pragma once

// Everything in one include.

#include "nlmix/benchmark.hpp"
#include "nlmix/dataset.hpp"
#include "nlmix/errors.hpp"
#include "nlmix/export.hpp"
#include "nlmix/initials.hpp"
#include "nlmix/inspect.hpp"
#include "nlmix/layout.hpp"
#include "nlmix/likelihood.hpp"
#include "nlmix/lmm.hpp"
#include "nlmix/mcmc.hpp"
#include "nlmix/report.hpp"
#include "nlmix/saem.hpp"
#include "nlmix/simulate.hpp"
#include "nlmix/stats.hpp"
#include "nlmix/structural.hpp"
#include "nlmix/svg.hpp"
#include "nlmix/trajectory.hpp"
