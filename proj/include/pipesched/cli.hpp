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

#ifndef PIPESCHED_CLI_HPP_
#define PIPESCHED_CLI_HPP_

#include <chrono>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "pipesched/heuristics.hpp"
#include "pipesched/solver.hpp"

namespace pipesched {

enum ExitCode : int {
  kExitOk = 0,
  kExitInfeasible = 1,
  kExitUsage = 2,
  kExitIo = 3,
};

struct StrategyResult {
  std::string name;
  std::optional<Time> makespan;  // nullopt: infeasible
  std::vector<Bytes> peak;
  double bubble_ratio = 0;
  std::string status;  // solver status for "exact"
};

struct CompareReport {
  std::vector<StrategyResult> strategies;  // sequential, 1f1b, pipeoffload, ada, exact
};

CompareReport Compare(const PipelineInstance& inst, const SolveBudget& exact_budget);
std::string CompareToJson(const CompareReport& r);
std::string CompareToTable(const CompareReport& r);

// Accepts "250ms", "10s", "1.5s", "2m" or a bare number of seconds.
std::optional<std::chrono::milliseconds> ParseDuration(const std::string& text);

// args[0] is the program name.
int RunCli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pipesched

#endif  // PIPESCHED_CLI_HPP_
