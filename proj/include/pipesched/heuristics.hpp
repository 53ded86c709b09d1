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

#ifndef PIPESCHED_HEURISTICS_HPP_
#define PIPESCHED_HEURISTICS_HPP_

#include <optional>
#include <string>
#include <vector>

#include "pipesched/instance.hpp"
#include "pipesched/schedule.hpp"

namespace pipesched {

struct AdaParams {
  // How far the first B of a stage may slip. Unset: try 0, 1, 2, 4, ... up to
  // the dependency horizon and keep the shortest schedule.
  std::optional<Time> tolerance;
};

// Per-stage compute order plus the set of forward activations to offload.
struct SchedulePlan {
  std::vector<std::vector<OpId>> order;
  std::vector<OpId> offloaded;
};

// Discrete-event replay of a plan with earliest-start dispatch. Memory for a
// forward is reserved when it starts; transfers are chosen greedily (reloads
// for an imminent B first, then offloads in completion order). Returns
// nullopt, with the reason in `why`, when the replay deadlocks.
std::optional<Schedule> SimulatePlan(const PipelineInstance& inst, const SchedulePlan& plan,
                                     std::string* why = nullptr);

// Stage order: `fill[i]` forwards, then (B_k, W_k, F_{fill+k}) repeated.
SchedulePlan PatternPlan(const PipelineInstance& inst, const std::vector<int>& fill,
                         bool offload_all);

std::vector<int> OneFOneBFill(const PipelineInstance& inst);
std::vector<int> AdaFill(const PipelineInstance& inst, Time tolerance);

// All four throw Infeasible when no schedule of their shape fits memory.
Schedule SequentialSchedule(const PipelineInstance& inst);
Schedule OneFOneB(const PipelineInstance& inst);
Schedule PipeOffloadLike(const PipelineInstance& inst);
Schedule AdaOffload(const PipelineInstance& inst, const AdaParams& p = {});

struct NamedSchedule {
  Schedule schedule;
  std::string name;
  Time makespan = 0;
};

// Generator names in tie-break order.
const std::vector<std::string>& HeuristicNames();
NamedSchedule RunHeuristic(const std::string& name, const PipelineInstance& inst,
                           const AdaParams& p = {});

// Throws NoFeasibleSchedule when every generator fails.
NamedSchedule BestFeasible(const PipelineInstance& inst, const AdaParams& p = {});

}  // namespace pipesched

#endif  // PIPESCHED_HEURISTICS_HPP_
