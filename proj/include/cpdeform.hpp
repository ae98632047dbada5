#pragma once

#include "cpdeform/contact.hpp"
#include "cpdeform/errors.hpp"
#include "cpdeform/geometry.hpp"
#include "cpdeform/io/artifacts.hpp"
#include "cpdeform/io/ini.hpp"
#include "cpdeform/io/run_config.hpp"
#include "cpdeform/io/task_file.hpp"
#include "cpdeform/metrics.hpp"
#include "cpdeform/occupancy.hpp"
#include "cpdeform/particle_cloud.hpp"
#include "cpdeform/pipeline.hpp"
#include "cpdeform/sim/loss.hpp"
#include "cpdeform/sim/mpm.hpp"
#include "cpdeform/solver.hpp"
#include "cpdeform/tasks.hpp"
#include "cpdeform/transport.hpp"
