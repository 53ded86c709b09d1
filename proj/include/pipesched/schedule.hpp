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

#ifndef PIPESCHED_SCHEDULE_HPP_
#define PIPESCHED_SCHEDULE_HPP_

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pipesched/instance.hpp"

namespace pipesched {

struct ComputeEvent {
  OpId op;
  Time start = 0;
  Time end = 0;
  friend bool operator==(const ComputeEvent&, const ComputeEvent&) = default;
};

enum class TransferKind { kOffload, kReload };

struct TransferEvent {
  OpId op;  // the producing forward op
  TransferKind kind = TransferKind::kOffload;
  Time start = 0;
  Time end = 0;
  friend bool operator==(const TransferEvent&, const TransferEvent&) = default;
};

struct Schedule {
  std::vector<ComputeEvent> compute;
  std::vector<TransferEvent> transfers;
  std::vector<OpId> offloaded;  // kept sorted

  // Sorts every list into canonical order (by op, then start).
  void Normalize();
  bool IsOffloaded(const OpId& op) const;
  friend bool operator==(const Schedule&, const Schedule&) = default;
};

// Dense view of a schedule: compute event and transfer events by op index.
// Throws IncompleteSchedule when a compute event is missing or duplicated.
class ScheduleIndex {
 public:
  ScheduleIndex(const Schedule& s, const PipelineInstance& inst);
  const ComputeEvent& Compute(const OpId& op) const { return *compute_[inst_->Index(op)]; }
  const TransferEvent* Offload(const OpId& op) const { return offload_[inst_->Index(op)]; }
  const TransferEvent* Reload(const OpId& op) const { return reload_[inst_->Index(op)]; }

 private:
  const PipelineInstance* inst_;
  std::vector<const ComputeEvent*> compute_;
  std::vector<const TransferEvent*> offload_;
  std::vector<const TransferEvent*> reload_;
};

enum class MemorySemantics {
  kStrict,       // offload frees memory when the transfer completes
  kMilpRelaxed,  // offload frees memory when the transfer starts
};

const char* SemanticsName(MemorySemantics s);

struct MemoryTrace {
  // Per stage: (time, usage after every change at that time), strictly
  // increasing in time.
  std::vector<std::vector<std::pair<Time, Bytes>>> breakpoints;
  std::vector<Bytes> peak;
  std::vector<Bytes> final_usage;
};

// Throws IncompleteSchedule.
Time Makespan(const Schedule& s, const PipelineInstance& inst);

// Throws IncompleteSchedule or NegativeUsage.
MemoryTrace ComputeMemoryTrace(const Schedule& s, const PipelineInstance& inst,
                               MemorySemantics semantics);

struct Violation {
  std::string id;
  std::vector<OpId> ops;
  Time measured = 0;
  Time required = 0;
  std::string detail;
};

struct ValidationReport {
  bool ok = true;
  std::vector<Violation> violations;
  std::string Summary() const;
};

// Never throws on bad schedules; structural problems are reported as
// STRUCTURE or DURATION violations.
ValidationReport Validate(const Schedule& s, const PipelineInstance& inst,
                          MemorySemantics semantics);

std::string ScheduleToJson(const Schedule& s);
Schedule ParseSchedule(const std::string& text);  // throws ParseError
Schedule LoadSchedule(const std::filesystem::path& path);
void SaveSchedule(const Schedule& s, const std::filesystem::path& path);

// Fraction of stage-time spent idle over the makespan.
double BubbleRatio(const Schedule& s, const PipelineInstance& inst);

// Number of forward events before the first backward, per stage.
std::vector<int> FillProfile(const Schedule& s, const PipelineInstance& inst);

// Throws InvalidSchedule when the schedule does not validate.
std::string GanttSvg(const Schedule& s, const PipelineInstance& inst);

}  // namespace pipesched

#endif  // PIPESCHED_SCHEDULE_HPP_
