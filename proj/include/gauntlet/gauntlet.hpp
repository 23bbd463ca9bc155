#pragma once

// Convenience umbrella for consumers that want the whole pipeline.

#include "gauntlet/adapter.hpp"
#include "gauntlet/config.hpp"
#include "gauntlet/core.hpp"
#include "gauntlet/diff.hpp"
#include "gauntlet/embedding.hpp"
#include "gauntlet/error.hpp"
#include "gauntlet/extract.hpp"
#include "gauntlet/filter.hpp"
#include "gauntlet/gateway.hpp"
#include "gauntlet/http_provider.hpp"
#include "gauntlet/inspector.hpp"
#include "gauntlet/kb.hpp"
#include "gauntlet/matcher.hpp"
#include "gauntlet/metrics.hpp"
#include "gauntlet/orchestrator.hpp"
#include "gauntlet/templates.hpp"
