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

#include "pipesched/online.hpp"

#include <algorithm>
#include <limits>

#include "json.hpp"
#include "pipesched/errors.hpp"

namespace pipesched {

OnlineReport OnlineSim(const PipelineInstance& inst, int iterations, const SolveBudget& budget,
                       const AdaParams& p, const Cache* cache) {
  if (iterations < 1) throw PreconditionViolation("iterations must be >= 1");
  WarmStart warm = WarmStartFromCache(cache, inst, p);

  SolveBudget virt = budget;
  const auto ms = static_cast<std::uint64_t>(std::max<std::int64_t>(0, budget.wall_time_limit.count()));
  const std::uint64_t cap = std::numeric_limits<std::uint64_t>::max() / kNodesPerMs;
  virt.node_limit = std::min(budget.node_limit, ms >= cap ? std::numeric_limits<std::uint64_t>::max()
                                                          : ms * kNodesPerMs);
  virt.wall_time_limit = std::chrono::milliseconds::max();

  struct Arrived {
    Time at;
    Time makespan;
    Schedule schedule;
  };
  std::vector<Arrived> stream;
  OnlineReport rep;
  rep.warm_source = warm.source;
  {
    SolveSession session(inst, ModelOptions::For(inst), virt, warm.schedule);
    while (true) {
      StreamItem item = session.Next();
      if (item.terminal) {
        rep.final_status = item.status;
        break;
      }
      const auto at = static_cast<Time>((item.incumbent.nodes + kNodesPerMs - 1) / kNodesPerMs);
      rep.trajectory.push_back({at, item.incumbent.makespan});
      stream.push_back({at, item.incumbent.makespan, std::move(item.incumbent.schedule)});
    }
  }

  Time now = 0;
  Time current = warm.makespan;
  std::string source = warm.source;
  for (int k = 0; k < iterations; ++k) {
    for (const Arrived& a : stream) {
      if (a.at > now || a.makespan >= current) continue;
      if (!Validate(a.schedule, inst, MemorySemantics::kStrict).ok) continue;
      current = a.makespan;
      source = "solver";
    }
    rep.iterations.push_back({k + 1, now, current, source});
    now += current;
  }
  rep.total = now;
  return rep;
}

std::string OnlineReportToJson(const OnlineReport& r) {
  nlohmann::json j;
  j["total_time"] = r.total;
  j["warm_source"] = r.warm_source;
  j["final_status"] = StatusName(r.final_status);
  j["iterations"] = nlohmann::json::array();
  for (const auto& it : r.iterations) {
    j["iterations"].push_back(
        {{"index", it.index}, {"start", it.start}, {"makespan", it.makespan}, {"source", it.source}});
  }
  j["trajectory"] = nlohmann::json::array();
  for (const auto& t : r.trajectory) j["trajectory"].push_back({{"arrival", t.arrival}, {"makespan", t.makespan}});
  return j.dump(1);
}

}  // namespace pipesched
