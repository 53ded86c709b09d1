// Copyright 2026 The pipesched Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef PIPESCHED_ONLINE_HPP_
#define PIPESCHED_ONLINE_HPP_

#include <string>
#include <vector>

#include "pipesched/cache.hpp"
#include "pipesched/solver.hpp"

namespace pipesched {

// Solver effort is measured on a virtual clock: this many search nodes take
// one millisecond, and one millisecond is one simulated time quantum. The
// wall-time budget becomes a node budget, so runs are reproducible.
inline constexpr std::uint64_t kNodesPerMs = 1000;

struct IterationRecord {
  int index = 0;
  Time start = 0;
  Time makespan = 0;
  std::string source;  // warm-start source, or "solver"
};

struct TrajectoryPoint {
  Time arrival = 0;  // simulated time the incumbent became available
  Time makespan = 0;
};

struct OnlineReport {
  Time total = 0;
  std::vector<IterationRecord> iterations;
  std::vector<TrajectoryPoint> trajectory;  // every streamed incumbent
  std::string warm_source;
  SolveStatus final_status = SolveStatus::kUnknown;
};

// Throws PreconditionViolation when iterations < 1 and NoFeasibleSchedule
// when there is no initial schedule.
OnlineReport OnlineSim(const PipelineInstance& inst, int iterations, const SolveBudget& budget,
                       const AdaParams& p = {}, const Cache* cache = nullptr);

std::string OnlineReportToJson(const OnlineReport& r);

}  // namespace pipesched

#endif  // PIPESCHED_ONLINE_HPP_
