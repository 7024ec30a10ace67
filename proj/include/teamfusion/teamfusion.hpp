#pragma once

#include "teamfusion/errors.hpp"
#include "teamfusion/core.hpp"
#include "teamfusion/templates.hpp"
#include "teamfusion/persona.hpp"
#include "teamfusion/gateway.hpp"
#include "teamfusion/orchestrator.hpp"
#include "teamfusion/remix.hpp"
#include "teamfusion/session.hpp"
#include "teamfusion/metrics.hpp"
#include "teamfusion/store.hpp"
#include "teamfusion/harness.hpp"
#include "teamfusion/service.hpp"
