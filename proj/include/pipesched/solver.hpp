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

#ifndef PIPESCHED_SOLVER_HPP_
#define PIPESCHED_SOLVER_HPP_

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include "pipesched/milp.hpp"
#include "pipesched/schedule.hpp"

namespace pipesched {

inline constexpr Time kInfiniteTime = std::numeric_limits<Time>::max();

enum class SolveStatus { kOptimal, kFeasible, kInfeasible, kUnknown };

const char* StatusName(SolveStatus s);

struct SolveBudget {
  std::chrono::milliseconds wall_time_limit{300000};
  std::uint64_t node_limit = std::numeric_limits<std::uint64_t>::max();
  double target_gap = 0.0;
};

struct SolveStats {
  std::uint64_t nodes = 0;
  std::uint64_t pruned_bound = 0;
  std::uint64_t pruned_memory = 0;
  double elapsed_ms = 0;
};

struct SolveOutcome {
  std::optional<Schedule> incumbent;
  Time incumbent_makespan = kInfiniteTime;
  Time lower_bound = 0;
  SolveStatus status = SolveStatus::kUnknown;
  SolveStats stats;
  bool warm_rejected = false;
};

std::string OutcomeToJson(const SolveOutcome& o);

struct Incumbent {
  Schedule schedule;
  Time makespan = 0;
  Time lower_bound = 0;
  double elapsed_ms = 0;
  std::uint64_t nodes = 0;  // search nodes expanded when found
};

using IncumbentCallback = std::function<void(const Incumbent&)>;

// `warm` becomes the first incumbent when it validates under `semantics`;
// otherwise it is ignored and `warm_rejected` is set.
SolveOutcome Solve(const PipelineInstance& inst, const ModelOptions& opts,
                   const SolveBudget& budget, const std::optional<Schedule>& warm = std::nullopt,
                   MemorySemantics semantics = MemorySemantics::kStrict,
                   const IncumbentCallback& on_incumbent = nullptr,
                   const std::atomic<bool>* cancel = nullptr);

// Exhaustive time-indexed search. Requires at most 12 compute ops and at most
// 4 offloadable ops; throws PreconditionViolation otherwise.
SolveOutcome BruteForceOracle(const PipelineInstance& inst,
                              MemorySemantics semantics = MemorySemantics::kStrict,
                              bool post_validation = false);

struct StreamItem {
  Incumbent incumbent;
  bool terminal = false;
  SolveStatus status = SolveStatus::kUnknown;  // set on the terminal item
};

// Runs Solve on a worker thread. Next() yields every improving incumbent in
// discovery order, then one terminal item; after that it throws
// SessionClosed.
class SolveSession {
 public:
  SolveSession(PipelineInstance inst, ModelOptions opts, SolveBudget budget,
               std::optional<Schedule> warm,
               MemorySemantics semantics = MemorySemantics::kStrict);
  ~SolveSession();
  SolveSession(const SolveSession&) = delete;
  SolveSession& operator=(const SolveSession&) = delete;

  StreamItem Next();
  void Cancel() { cancel_ = true; }
  // Blocks until the worker finishes.
  const SolveOutcome& Outcome();

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<StreamItem> queue_;
  bool closed_ = false;
  bool done_ = false;
  std::atomic<bool> cancel_{false};
  SolveOutcome outcome_;
  std::thread worker_;
};

}  // namespace pipesched

#endif  // PIPESCHED_SOLVER_HPP_
