#pragma once

#include "permfm/errors.hpp"
#include "permfm/random.hpp"
#include "permfm/matgeo.hpp"
#include "permfm/assign.hpp"
#include "permfm/instances.hpp"
#include "permfm/dataset_io.hpp"
#include "permfm/net.hpp"
#include "permfm/optim.hpp"
#include "permfm/checkpoint.hpp"
#include "permfm/flow.hpp"
#include "permfm/evalkit.hpp"
#include "permfm/tasks.hpp"
#include "permfm/config.hpp"
#include "permfm/verify.hpp"
#include "permfm/commands.hpp"
