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

#ifndef PIPESCHED_INSTANCE_HPP_
#define PIPESCHED_INSTANCE_HPP_

#include <array>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace pipesched {

using Time = std::int64_t;
using Bytes = std::int64_t;

// Compute operation kinds. The enumerator order is the tie-breaking order.
enum class OpKind : std::uint8_t { F = 0, B = 1, W = 2 };

inline constexpr std::array<OpKind, 3> kAllKinds = {OpKind::F, OpKind::B,
                                                    OpKind::W};

char KindChar(OpKind k);
OpKind KindFromChar(char c);  // throws ParseError

// One compute operation. Stage and micro-batch are 1-based.
struct OpId {
  int stage = 1;
  int microbatch = 1;
  OpKind kind = OpKind::F;

  friend auto operator<=>(const OpId&, const OpId&) = default;
  friend bool operator==(const OpId&, const OpId&) = default;
};

std::string ToString(const OpId& op);  // e.g. "(2,3,B)"

struct PipelineInstance {
  int num_stages = 0;
  int num_microbatches = 0;
  // [stage-1][microbatch-1][kind]
  std::vector<std::vector<std::array<Time, 3>>> proc_time;
  Time comm_time = 0;
  Time offload_time = 0;
  std::vector<std::vector<std::array<Bytes, 3>>> mem_delta;
  std::vector<std::vector<std::array<Bytes, 3>>> act_size;
  std::vector<Bytes> mem_limit;
  // Partition of 1-based stage indices; stages in one group share a single
  // host transfer channel.
  std::vector<std::vector<int>> topology_groups;
  bool post_validation = false;

  Time T(const OpId& op) const {
    return proc_time[op.stage - 1][op.microbatch - 1][static_cast<int>(op.kind)];
  }
  Bytes Delta(const OpId& op) const {
    return mem_delta[op.stage - 1][op.microbatch - 1][static_cast<int>(op.kind)];
  }
  Bytes Gamma(const OpId& op) const {
    return act_size[op.stage - 1][op.microbatch - 1][static_cast<int>(op.kind)];
  }
  Bytes Limit(int stage) const { return mem_limit[stage - 1]; }
  bool Offloadable(const OpId& op) const { return Gamma(op) > 0; }

  int num_ops() const { return 3 * num_stages * num_microbatches; }

  // Dense compute-op index in [0, num_ops()), ordered lexicographically by
  // (stage, microbatch, kind).
  int Index(const OpId& op) const {
    return ((op.stage - 1) * num_microbatches + (op.microbatch - 1)) * 3 +
           static_cast<int>(op.kind);
  }
  OpId OpAt(int index) const {
    return OpId{index / (3 * num_microbatches) + 1,
                (index / 3) % num_microbatches + 1,
                static_cast<OpKind>(index % 3)};
  }

  // Every compute op, lexicographic.
  std::vector<OpId> AllOps() const;
  // Every op with Gamma > 0, lexicographic.
  std::vector<OpId> OffloadableOps() const;
  // Index into topology_groups of the group holding `stage`.
  int GroupOf(int stage) const;

  friend bool operator==(const PipelineInstance&,
                         const PipelineInstance&) = default;
};

// Throws InvariantViolation naming the offending field and indices.
void ValidateInstance(const PipelineInstance& inst);

// JSON I/O. Load throws ParseError (with line or field locus) or
// InvariantViolation.
PipelineInstance ParseInstance(const std::string& text);
PipelineInstance LoadInstance(const std::filesystem::path& path);
std::string SerializeInstance(const PipelineInstance& inst);
void SaveInstance(const PipelineInstance& inst, const std::filesystem::path& path);

// Equal-parameter instance family. Delta_B frees ceil(act/2), Delta_W the
// rest; act = 1 is rejected because Delta_W would be zero.
PipelineInstance MakeUniformInstance(int num_stages, int num_microbatches,
                                     Time t_f, Time t_b, Time t_w, Time t_comm,
                                     Time t_offload, Bytes act,
                                     int mem_limit_in_activations);

struct TimeRange {
  Time lo = 1;
  Time hi = 3;
};

enum class MemProfile {
  kAmple,  // memory never binds
  kTight,  // limit between one and a few activations
  kMixed,  // chosen per seed
};

struct RandomOptions {
  TimeRange comm{0, 1};
  TimeRange offload{1, 2};
  bool allow_topology = true;
  bool post_validation = false;
};

// Seeded generator. Parameters vary per stage and are identical across
// micro-batches. Requires 3 * P * m <= 60.
PipelineInstance RandomInstance(std::uint64_t seed, int num_stages,
                                int num_microbatches, TimeRange times,
                                MemProfile mem, const RandomOptions& opts = {});

}  // namespace pipesched

#endif  // PIPESCHED_INSTANCE_HPP_
