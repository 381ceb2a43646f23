#pragma once

// crowdfair: truth discovery and fairness auditing for crowd-labeled binary
// datasets. Single umbrella header.

#include "crowdfair/downstream.hpp"
#include "crowdfair/error.hpp"
#include "crowdfair/fair_td.hpp"
#include "crowdfair/io.hpp"
#include "crowdfair/linear_model.hpp"
#include "crowdfair/metrics.hpp"
#include "crowdfair/model.hpp"
#include "crowdfair/simulate.hpp"
#include "crowdfair/truth_discovery.hpp"
#include "crowdfair/worker_audit.hpp"

namespace crowdfair {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace crowdfair
