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

#include "pipesched/instance.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"
#include "pipesched/errors.hpp"

namespace pipesched {

using json = nlohmann::json;

char KindChar(OpKind k) {
  switch (k) {
    case OpKind::F: return 'F';
    case OpKind::B: return 'B';
    case OpKind::W: return 'W';
  }
  return '?';
}

OpKind KindFromChar(char c) {
  switch (c) {
    case 'F': return OpKind::F;
    case 'B': return OpKind::B;
    case 'W': return OpKind::W;
    default: throw ParseError(std::string("unknown op kind '") + c + "'");
  }
}

std::string ToString(const OpId& op) {
  std::ostringstream os;
  os << '(' << op.stage << ',' << op.microbatch << ',' << KindChar(op.kind) << ')';
  return os.str();
}

std::vector<OpId> PipelineInstance::AllOps() const {
  std::vector<OpId> ops;
  ops.reserve(num_ops());
  for (int i = 0; i < num_ops(); ++i) ops.push_back(OpAt(i));
  return ops;
}

std::vector<OpId> PipelineInstance::OffloadableOps() const {
  std::vector<OpId> ops;
  for (int i = 0; i < num_ops(); ++i) {
    OpId op = OpAt(i);
    if (Offloadable(op)) ops.push_back(op);
  }
  return ops;
}

int PipelineInstance::GroupOf(int stage) const {
  for (std::size_t g = 0; g < topology_groups.size(); ++g) {
    for (int s : topology_groups[g]) {
      if (s == stage) return static_cast<int>(g);
    }
  }
  throw InvariantViolation("stage " + std::to_string(stage) +
                           " is not in any topology group");
}

namespace {

std::string Loc(int i, int j) {
  return "(" + std::to_string(i) + "," + std::to_string(j) + ")";
}

std::string Loc(int i, int j, int c) {
  return "(" + std::to_string(i) + "," + std::to_string(j) + "," +
         KindChar(static_cast<OpKind>(c)) + ")";
}

}  // namespace

void ValidateInstance(const PipelineInstance& inst) {
  const int P = inst.num_stages;
  const int m = inst.num_microbatches;
  if (P <= 0) throw InvariantViolation("num_stages must be positive");
  if (m <= 0) throw InvariantViolation("num_microbatches must be positive");
  auto check_shape = [&](const auto& arr, const char* name) {
    if (static_cast<int>(arr.size()) != P) {
      throw InvariantViolation(std::string(name) + ": expected " +
                               std::to_string(P) + " stages");
    }
    for (int i = 0; i < P; ++i) {
      if (static_cast<int>(arr[i].size()) != m) {
        throw InvariantViolation(std::string(name) + "[" + std::to_string(i + 1) +
                                 "]: expected " + std::to_string(m) +
                                 " micro-batches");
      }
    }
  };
  check_shape(inst.proc_time, "proc_times");
  check_shape(inst.mem_delta, "mem_deltas");
  check_shape(inst.act_size, "act_sizes");
  if (static_cast<int>(inst.mem_limit.size()) != P) {
    throw InvariantViolation("mem_limits: expected " + std::to_string(P) + " entries");
  }
  if (inst.comm_time < 0) throw InvariantViolation("comm_time must be >= 0");
  if (inst.offload_time < 0) throw InvariantViolation("offload_time must be >= 0");

  for (int i = 0; i < P; ++i) {
    if (inst.mem_limit[i] <= 0) {
      throw InvariantViolation("mem_limits[" + std::to_string(i + 1) +
                               "] must be positive");
    }
    for (int j = 0; j < m; ++j) {
      const auto& t = inst.proc_time[i][j];
      const auto& d = inst.mem_delta[i][j];
      const auto& g = inst.act_size[i][j];
      for (int c = 0; c < 3; ++c) {
        if (t[c] <= 0) {
          throw InvariantViolation("proc_times" + Loc(i + 1, j + 1, c) +
                                   " must be positive");
        }
        if (g[c] < 0) {
          throw InvariantViolation("act_sizes" + Loc(i + 1, j + 1, c) +
                                   " must be non-negative");
        }
      }
      if (d[0] + d[1] + d[2] != 0) {
        throw InvariantViolation("mem_deltas" + Loc(i + 1, j + 1) +
                                 ": F+B+W = " + std::to_string(d[0] + d[1] + d[2]) +
                                 ", expected 0");
      }
      if (d[0] <= 0 || d[1] >= 0 || d[2] >= 0) {
        throw InvariantViolation("mem_deltas" + Loc(i + 1, j + 1) +
                                 ": require F > 0, B < 0, W < 0");
      }
      if (g[1] != 0 || g[2] != 0) {
        throw InvariantViolation("act_sizes" + Loc(i + 1, j + 1) +
                                 ": only forward activations are offloadable");
      }
      if (g[0] > d[0]) {
        throw InvariantViolation("act_sizes" + Loc(i + 1, j + 1, 0) +
                                 " exceeds mem_deltas" + Loc(i + 1, j + 1, 0));
      }
    }
  }

  std::vector<int> seen(P + 1, 0);
  for (const auto& group : inst.topology_groups) {
    if (group.empty()) throw InvariantViolation("topology_groups: empty group");
    for (int s : group) {
      if (s < 1 || s > P) {
        throw InvariantViolation("topology_groups: stage " + std::to_string(s) +
                                 " out of range");
      }
      if (seen[s]++) {
        throw InvariantViolation("topology_groups: stage " + std::to_string(s) +
                                 " listed twice");
      }
    }
  }
  for (int s = 1; s <= P; ++s) {
    if (!seen[s]) {
      throw InvariantViolation("topology_groups: stage " + std::to_string(s) +
                               " missing");
    }
  }
}

namespace {

const json& Field(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) throw ParseError(std::string("missing field '") + key + "'");
  return *it;
}

double Number(const json& v, const std::string& where) {
  if (!v.is_number()) throw ParseError("field '" + where + "': expected a number");
  return v.get<double>();
}

std::int64_t Integer(const json& v, const std::string& where) {
  if (!v.is_number_integer()) {
    throw ParseError("field '" + where + "': expected an integer");
  }
  return v.get<std::int64_t>();
}

Time ScaleTime(double value, double scale, const std::string& where) {
  double q = value * scale;
  double r = std::round(q);
  if (std::abs(q - r) > 1e-6) {
    throw ParseError("field '" + where + "': " + std::to_string(value) +
                     " is not a whole number of quanta at time_scale " +
                     std::to_string(scale));
  }
  return static_cast<Time>(r);
}

template <typename Elem, typename Conv>
std::vector<std::vector<std::array<Elem, 3>>> Dense3(const json& v, int P, int m,
                                                     const char* name, Conv conv) {
  std::string base(name);
  if (!v.is_array() || static_cast<int>(v.size()) != P) {
    throw ParseError("field '" + base + "': expected array of " +
                     std::to_string(P) + " stages");
  }
  std::vector<std::vector<std::array<Elem, 3>>> out(P);
  for (int i = 0; i < P; ++i) {
    const json& row = v[i];
    std::string wi = base + "[" + std::to_string(i) + "]";
    if (!row.is_array() || static_cast<int>(row.size()) != m) {
      throw ParseError("field '" + wi + "': expected array of " +
                       std::to_string(m) + " micro-batches");
    }
    out[i].resize(m);
    for (int j = 0; j < m; ++j) {
      const json& cell = row[j];
      std::string wj = wi + "[" + std::to_string(j) + "]";
      if (!cell.is_array() || cell.size() != 3) {
        throw ParseError("field '" + wj + "': expected [F,B,W] triple");
      }
      for (int c = 0; c < 3; ++c) {
        out[i][j][c] = conv(cell[c], wj + "[" + std::to_string(c) + "]");
      }
    }
  }
  return out;
}

}  // namespace

PipelineInstance ParseInstance(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t line = 1 + std::count(text.begin(),
                                      text.begin() + std::min(e.byte, text.size()),
                                      '\n');
    throw ParseError("line " + std::to_string(line) + ": " + e.what());
  }
  if (!doc.is_object()) throw ParseError("instance must be a JSON object");

  PipelineInstance inst;
  inst.num_stages = static_cast<int>(Integer(Field(doc, "num_stages"), "num_stages"));
  inst.num_microbatches =
      static_cast<int>(Integer(Field(doc, "num_microbatches"), "num_microbatches"));
  if (inst.num_stages <= 0) throw InvariantViolation("num_stages must be positive");
  if (inst.num_microbatches <= 0) {
    throw InvariantViolation("num_microbatches must be positive");
  }
  double scale = 1.0;
  if (doc.contains("time_scale")) scale = Number(doc["time_scale"], "time_scale");
  if (!(scale > 0)) throw ParseError("field 'time_scale': must be positive");

  const int P = inst.num_stages;
  const int m = inst.num_microbatches;
  auto time_conv = [scale](const json& v, const std::string& w) {
    return ScaleTime(Number(v, w), scale, w);
  };
  auto byte_conv = [](const json& v, const std::string& w) { return Integer(v, w); };
  inst.proc_time = Dense3<Time>(Field(doc, "proc_times"), P, m, "proc_times", time_conv);
  inst.comm_time = time_conv(Field(doc, "comm_time"), "comm_time");
  inst.offload_time = time_conv(Field(doc, "offload_time"), "offload_time");
  inst.mem_delta = Dense3<Bytes>(Field(doc, "mem_deltas"), P, m, "mem_deltas", byte_conv);
  inst.act_size = Dense3<Bytes>(Field(doc, "act_sizes"), P, m, "act_sizes", byte_conv);

  const json& limits = Field(doc, "mem_limits");
  if (!limits.is_array() || static_cast<int>(limits.size()) != P) {
    throw ParseError("field 'mem_limits': expected array of " + std::to_string(P));
  }
  for (int i = 0; i < P; ++i) {
    inst.mem_limit.push_back(Integer(limits[i], "mem_limits[" + std::to_string(i) + "]"));
  }

  if (doc.contains("topology_groups")) {
    const json& groups = doc["topology_groups"];
    if (!groups.is_array()) throw ParseError("field 'topology_groups': expected array");
    for (std::size_t g = 0; g < groups.size(); ++g) {
      std::string w = "topology_groups[" + std::to_string(g) + "]";
      if (!groups[g].is_array()) throw ParseError("field '" + w + "': expected array");
      std::vector<int> group;
      for (const auto& s : groups[g]) group.push_back(static_cast<int>(Integer(s, w)));
      inst.topology_groups.push_back(std::move(group));
    }
  } else {
    for (int s = 1; s <= P; ++s) inst.topology_groups.push_back({s});
  }
  if (doc.contains("post_validation")) {
    if (!doc["post_validation"].is_boolean()) {
      throw ParseError("field 'post_validation': expected a boolean");
    }
    inst.post_validation = doc["post_validation"].get<bool>();
  }
  ValidateInstance(inst);
  return inst;
}

PipelineInstance LoadInstance(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open instance file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ParseInstance(ss.str());
}

std::string SerializeInstance(const PipelineInstance& inst) {
  json doc;
  doc["num_stages"] = inst.num_stages;
  doc["num_microbatches"] = inst.num_microbatches;
  doc["time_scale"] = 1;
  doc["proc_times"] = inst.proc_time;
  doc["comm_time"] = inst.comm_time;
  doc["offload_time"] = inst.offload_time;
  doc["mem_deltas"] = inst.mem_delta;
  doc["act_sizes"] = inst.act_size;
  doc["mem_limits"] = inst.mem_limit;
  doc["topology_groups"] = inst.topology_groups;
  doc["post_validation"] = inst.post_validation;
  return doc.dump(2) + "\n";
}

void SaveInstance(const PipelineInstance& inst, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write instance file " + path.string());
  out << SerializeInstance(inst);
}

PipelineInstance MakeUniformInstance(int num_stages, int num_microbatches, Time t_f,
                                     Time t_b, Time t_w, Time t_comm, Time t_offload,
                                     Bytes act, int mem_limit_in_activations) {
  if (num_stages <= 0 || num_microbatches <= 0) {
    throw PreconditionViolation("stage and micro-batch counts must be positive");
  }
  if (mem_limit_in_activations < 1) {
    throw PreconditionViolation("memory limit must hold at least one activation");
  }
  if (act < 2) throw InvariantViolation("activation size must be at least 2 so that B and W both free memory");
  PipelineInstance inst;
  inst.num_stages = num_stages;
  inst.num_microbatches = num_microbatches;
  const Bytes b_free = (act + 1) / 2;
  const Bytes w_free = act - b_free;
  inst.proc_time.assign(num_stages,
                        std::vector<std::array<Time, 3>>(num_microbatches, {t_f, t_b, t_w}));
  inst.mem_delta.assign(
      num_stages, std::vector<std::array<Bytes, 3>>(num_microbatches, {act, -b_free, -w_free}));
  inst.act_size.assign(num_stages,
                       std::vector<std::array<Bytes, 3>>(num_microbatches, {act, 0, 0}));
  inst.comm_time = t_comm;
  inst.offload_time = t_offload;
  inst.mem_limit.assign(num_stages, act * mem_limit_in_activations);
  for (int s = 1; s <= num_stages; ++s) inst.topology_groups.push_back({s});
  ValidateInstance(inst);
  return inst;
}

namespace {

// std distributions are implementation-defined; this keeps generated
// instances identical across standard libraries.
std::int64_t Uniform(std::mt19937_64& rng, std::int64_t lo, std::int64_t hi) {
  const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % span;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return lo + static_cast<std::int64_t>(x % span);
}

}  // namespace

PipelineInstance RandomInstance(std::uint64_t seed, int num_stages, int num_microbatches,
                                TimeRange times, MemProfile mem,
                                const RandomOptions& opts) {
  if (num_stages <= 0 || num_microbatches <= 0 ||
      3 * num_stages * num_microbatches > 60) {
    throw PreconditionViolation("random_instance requires 3*P*m <= 60");
  }
  if (times.lo < 1 || times.hi < times.lo) {
    throw PreconditionViolation("random_instance: invalid time range");
  }
  std::mt19937_64 rng(seed);
  const int P = num_stages;
  const int m = num_microbatches;
  PipelineInstance inst;
  inst.num_stages = P;
  inst.num_microbatches = m;
  inst.comm_time = Uniform(rng, opts.comm.lo, opts.comm.hi);
  inst.offload_time = Uniform(rng, opts.offload.lo, opts.offload.hi);
  inst.post_validation = opts.post_validation;
  if (mem == MemProfile::kMixed) {
    mem = Uniform(rng, 0, 2) == 0 ? MemProfile::kAmple : MemProfile::kTight;
  }

  inst.proc_time.resize(P);
  inst.mem_delta.resize(P);
  inst.act_size.resize(P);
  for (int i = 0; i < P; ++i) {
    std::array<Time, 3> t{};
    for (int c = 0; c < 3; ++c) t[c] = Uniform(rng, times.lo, times.hi);
    const Bytes act = Uniform(rng, 2, 6);
    const Bytes b_free = Uniform(rng, 1, act - 1);
    // Roughly a third of stages keep activations resident.
    const Bytes gamma = Uniform(rng, 0, 2) == 0 ? 0 : Uniform(rng, 1, act);
    inst.proc_time[i].assign(m, t);
    inst.mem_delta[i].assign(m, {act, -b_free, -(act - b_free)});
    inst.act_size[i].assign(m, {gamma, 0, 0});
    Bytes limit;
    if (mem == MemProfile::kAmple) {
      limit = act * m * 2;
    } else {
      limit = act + Uniform(rng, 0, act * std::min(m, 2));
    }
    inst.mem_limit.push_back(limit);
  }

  if (opts.allow_topology && P >= 2 && Uniform(rng, 0, 2) == 0) {
    for (int s = 1; s <= P; s += 2) {
      if (s + 1 <= P) {
        inst.topology_groups.push_back({s, s + 1});
      } else {
        inst.topology_groups.push_back({s});
      }
    }
  } else {
    for (int s = 1; s <= P; ++s) inst.topology_groups.push_back({s});
  }
  ValidateInstance(inst);
  return inst;
}

}  // namespace pipesched
