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

#ifndef PIPESCHED_CACHE_HPP_
#define PIPESCHED_CACHE_HPP_

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pipesched/heuristics.hpp"
#include "pipesched/instance.hpp"
#include "pipesched/schedule.hpp"

namespace pipesched {

inline constexpr double kDefaultGridStep = 0.25;

// Ratio order: T_B/T_F, T_W/T_F, T_comm/T_F, T_offload/T_F, M_limit/Gamma.
struct CacheKey {
  int num_stages = 0;
  int num_microbatches = 0;
  bool post_validation = false;
  double grid_step = kDefaultGridStep;
  std::vector<long long> steps;  // ratio = steps[k] * grid_step

  std::vector<double> Ratios() const;
  friend bool operator==(const CacheKey&, const CacheKey&) = default;
};

// Throws DegenerateInstance when the mean forward time is zero, and
// PreconditionViolation when grid_step is not positive.
CacheKey Discretize(const PipelineInstance& inst, double grid_step = kDefaultGridStep);

struct SequenceItem {
  OpId op;
  enum class Kind { kCompute, kOffload, kReload } kind = Kind::kCompute;
  friend bool operator==(const SequenceItem&, const SequenceItem&) = default;
};

struct CacheEntry {
  CacheKey key;
  std::vector<std::vector<OpId>> order;  // per stage, compute events
  std::vector<OpId> offloaded;
  // Every event in order of the instant its memory effect lands.
  std::vector<SequenceItem> sequence;
  double makespan_ratio = 0;  // makespan / mean forward time
};

// Orders of `s`, times stripped.
CacheEntry MakeEntry(const PipelineInstance& inst, const Schedule& s,
                     double grid_step = kDefaultGridStep);

std::string EntryToJson(const CacheEntry& e);
CacheEntry EntryFromJson(const std::string& line);  // throws ParseError

// Line-delimited JSON file. Writers take an exclusive advisory lock; readers
// take a shared one. Unparseable lines are skipped and reported in
// warnings().
class Cache {
 public:
  explicit Cache(std::filesystem::path db);

  // Keeps the entry with the smaller makespan ratio per key.
  void Store(const CacheEntry& e);
  // Exact key first, then the nearest key within one grid step on every
  // ratio (same P, m, post_validation and grid); ties by makespan ratio.
  std::optional<CacheEntry> Lookup(const CacheKey& key) const;
  // Best entry per key, in first-seen order.
  std::vector<CacheEntry> List() const;

  const std::vector<std::string>& warnings() const { return warnings_; }
  const std::filesystem::path& path() const { return db_; }

 private:
  std::vector<CacheEntry> Load() const;

  std::filesystem::path db_;
  mutable std::vector<std::string> warnings_;
};

// Re-times the cached sequence under `inst`; falls back to greedy replay of
// the per-stage order. Returns nullopt unless the result passes Strict
// validation. Throws ShapeMismatch when P or m differ.
std::optional<Schedule> Adapt(const CacheEntry& entry, const PipelineInstance& inst);

struct WarmStart {
  Schedule schedule;
  std::string source;  // "cache" or a heuristic name
  Time makespan = 0;
};

WarmStart WarmStartFromCache(const Cache* cache, const PipelineInstance& inst,
                             const AdaParams& p = {}, double grid_step = kDefaultGridStep);

}  // namespace pipesched

#endif  // PIPESCHED_CACHE_HPP_
