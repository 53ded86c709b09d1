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

#include "pipesched/schedule.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "json.hpp"
#include "pipesched/errors.hpp"

namespace pipesched {

using json = nlohmann::json;

void Schedule::Normalize() {
  std::sort(compute.begin(), compute.end(), [](const auto& a, const auto& b) {
    return std::tie(a.op, a.start) < std::tie(b.op, b.start);
  });
  std::sort(transfers.begin(), transfers.end(), [](const auto& a, const auto& b) {
    return std::tie(a.op, a.kind, a.start) < std::tie(b.op, b.kind, b.start);
  });
  std::sort(offloaded.begin(), offloaded.end());
  offloaded.erase(std::unique(offloaded.begin(), offloaded.end()), offloaded.end());
}

bool Schedule::IsOffloaded(const OpId& op) const {
  return std::binary_search(offloaded.begin(), offloaded.end(), op);
}

namespace {

bool InRange(const OpId& op, const PipelineInstance& inst) {
  return op.stage >= 1 && op.stage <= inst.num_stages && op.microbatch >= 1 &&
         op.microbatch <= inst.num_microbatches;
}

}  // namespace

ScheduleIndex::ScheduleIndex(const Schedule& s, const PipelineInstance& inst)
    : inst_(&inst),
      compute_(inst.num_ops(), nullptr),
      offload_(inst.num_ops(), nullptr),
      reload_(inst.num_ops(), nullptr) {
  for (const auto& ev : s.compute) {
    if (!InRange(ev.op, inst)) {
      throw IncompleteSchedule("compute event " + ToString(ev.op) + " out of range");
    }
    auto& slot = compute_[inst.Index(ev.op)];
    if (slot) throw IncompleteSchedule("duplicate compute event " + ToString(ev.op));
    slot = &ev;
  }
  for (int k = 0; k < inst.num_ops(); ++k) {
    if (!compute_[k]) {
      throw IncompleteSchedule("missing compute event " + ToString(inst.OpAt(k)));
    }
  }
  for (const auto& ev : s.transfers) {
    if (!InRange(ev.op, inst)) {
      throw IncompleteSchedule("transfer event " + ToString(ev.op) + " out of range");
    }
    auto& slot = (ev.kind == TransferKind::kOffload ? offload_ : reload_)[inst.Index(ev.op)];
    if (!slot) slot = &ev;
  }
}

const char* SemanticsName(MemorySemantics s) {
  return s == MemorySemantics::kStrict ? "strict" : "milp";
}

Time Makespan(const Schedule& s, const PipelineInstance& inst) {
  ScheduleIndex idx(s, inst);
  if (inst.post_validation) {
    Time best = 0;
    for (int i = 1; i <= inst.num_stages; ++i) {
      Time lo = std::numeric_limits<Time>::max();
      Time hi = std::numeric_limits<Time>::min();
      for (int j = 1; j <= inst.num_microbatches; ++j) {
        for (OpKind c : kAllKinds) {
          const auto& ev = idx.Compute({i, j, c});
          lo = std::min(lo, ev.start);
          hi = std::max(hi, ev.end);
        }
      }
      best = std::max(best, hi - lo);
    }
    return best;
  }
  Time lo = std::numeric_limits<Time>::max();
  Time hi = std::numeric_limits<Time>::min();
  for (const auto& ev : s.compute) {
    lo = std::min(lo, ev.start);
    hi = std::max(hi, ev.end);
  }
  return hi - lo;
}

MemoryTrace ComputeMemoryTrace(const Schedule& s, const PipelineInstance& inst,
                               MemorySemantics semantics) {
  ScheduleIndex idx(s, inst);
  const int P = inst.num_stages;
  std::vector<std::map<Time, Bytes>> changes(P);
  for (const auto& ev : s.compute) {
    changes[ev.op.stage - 1][ev.end] += inst.Delta(ev.op);
  }
  for (const auto& ev : s.transfers) {
    const Bytes g = inst.Gamma(ev.op);
    auto& ch = changes[ev.op.stage - 1];
    if (ev.kind == TransferKind::kOffload) {
      ch[semantics == MemorySemantics::kStrict ? ev.end : ev.start] -= g;
    } else {
      if (!idx.Offload(ev.op)) {
        throw NegativeUsage("reload of " + ToString(ev.op) + " without an offload");
      }
      ch[ev.start] += g;
    }
  }
  MemoryTrace trace;
  trace.breakpoints.resize(P);
  trace.peak.assign(P, 0);
  trace.final_usage.assign(P, 0);
  for (int i = 0; i < P; ++i) {
    Bytes usage = 0;
    for (const auto& [t, d] : changes[i]) {
      usage += d;
      if (usage < 0) {
        throw NegativeUsage("stage " + std::to_string(i + 1) + " usage " +
                            std::to_string(usage) + " at time " + std::to_string(t));
      }
      trace.breakpoints[i].emplace_back(t, usage);
      trace.peak[i] = std::max(trace.peak[i], usage);
    }
    trace.final_usage[i] = usage;
  }
  return trace;
}

std::string ValidationReport::Summary() const {
  if (ok) return "ok";
  std::ostringstream os;
  os << violations.size() << " violation(s)";
  for (const auto& v : violations) {
    os << "\n  " << v.id;
    for (const auto& op : v.ops) os << ' ' << ToString(op);
    os << ": measured " << v.measured << ", required " << v.required;
    if (!v.detail.empty()) os << " (" << v.detail << ")";
  }
  return os.str();
}

namespace {

struct Interval {
  Time start;
  Time end;
  OpId op;
};

// Reports every pair (a, b) where b starts before the latest-ending earlier
// interval finishes.
void CheckOverlaps(std::vector<Interval> ivs, const std::string& id,
                   const std::string& detail, ValidationReport& rep) {
  std::sort(ivs.begin(), ivs.end(), [](const Interval& a, const Interval& b) {
    return std::tie(a.start, a.end, a.op) < std::tie(b.start, b.end, b.op);
  });
  const Interval* open = nullptr;
  for (const auto& iv : ivs) {
    if (iv.end == iv.start) continue;
    if (open && iv.start < open->end) {
      rep.violations.push_back({id, {open->op, iv.op}, iv.start, open->end, detail});
    }
    if (!open || iv.end > open->end) open = &iv;
  }
}

}  // namespace

ValidationReport Validate(const Schedule& s, const PipelineInstance& inst,
                          MemorySemantics semantics) {
  ValidationReport rep;
  auto fail = [&](std::string id, std::vector<OpId> ops, Time measured, Time required,
                  std::string detail = {}) {
    rep.violations.push_back(
        {std::move(id), std::move(ops), measured, required, std::move(detail)});
  };
  auto finish = [&]() {
    rep.ok = rep.violations.empty();
    return rep;
  };

  std::vector<int> compute_count(inst.num_ops(), 0), off_count(inst.num_ops(), 0),
      rel_count(inst.num_ops(), 0);
  for (const auto& ev : s.compute) {
    if (!InRange(ev.op, inst)) {
      fail("STRUCTURE", {ev.op}, 0, 0, "compute event out of range");
      continue;
    }
    ++compute_count[inst.Index(ev.op)];
  }
  for (const auto& ev : s.transfers) {
    if (!InRange(ev.op, inst)) {
      fail("STRUCTURE", {ev.op}, 0, 0, "transfer event out of range");
      continue;
    }
    ++(ev.kind == TransferKind::kOffload ? off_count : rel_count)[inst.Index(ev.op)];
  }
  for (const auto& op : s.offloaded) {
    if (!InRange(op, inst)) {
      fail("STRUCTURE", {op}, 0, 0, "offloaded op out of range");
    } else if (!inst.Offloadable(op)) {
      fail("STRUCTURE", {op}, 0, 0, "op has no offloadable activation");
    }
  }
  for (int k = 0; k < inst.num_ops(); ++k) {
    OpId op = inst.OpAt(k);
    if (compute_count[k] != 1) {
      fail("STRUCTURE", {op}, compute_count[k], 1, "compute event count");
    }
    const int want = s.IsOffloaded(op) ? 1 : 0;
    if (off_count[k] != want || rel_count[k] != want) {
      fail("STRUCTURE", {op}, off_count[k] + rel_count[k], 2 * want,
           "transfer event count");
    }
  }
  if (!rep.violations.empty()) return finish();

  for (const auto& ev : s.compute) {
    if (ev.start < 0 || ev.end - ev.start != inst.T(ev.op)) {
      fail("DURATION", {ev.op}, ev.end - ev.start, inst.T(ev.op), "compute");
    }
  }
  for (const auto& ev : s.transfers) {
    if (ev.start < 0 || ev.end - ev.start != inst.offload_time) {
      fail("DURATION", {ev.op}, ev.end - ev.start, inst.offload_time,
           ev.kind == TransferKind::kOffload ? "offload" : "reload");
    }
  }

  ScheduleIndex idx(s, inst);
  const int P = inst.num_stages;
  const int m = inst.num_microbatches;
  const Time tc = inst.comm_time;
  for (int i = 1; i <= P; ++i) {
    for (int j = 1; j <= m; ++j) {
      const OpId f{i, j, OpKind::F}, b{i, j, OpKind::B}, w{i, j, OpKind::W};
      const auto &ef = idx.Compute(f), &eb = idx.Compute(b), &ew = idx.Compute(w);
      if (i > 1) {
        const OpId up{i - 1, j, OpKind::F};
        const Time need = idx.Compute(up).end + tc;
        if (ef.start < need) fail("DEP_F", {up, f}, ef.start, need);
      }
      if (i < P) {
        const OpId down{i + 1, j, OpKind::B};
        const Time need = idx.Compute(down).end + tc;
        if (eb.start < need) fail("DEP_B", {down, b}, eb.start, need);
      }
      if (eb.start < ef.end) fail("FBW_ORDER", {f, b}, eb.start, ef.end);
      if (ew.start < eb.end) fail("FBW_ORDER", {b, w}, ew.start, eb.end);
      if (s.IsOffloaded(f)) {
        const auto* o = idx.Offload(f);
        const auto* r = idx.Reload(f);
        if (o->start < ef.end) fail("OFFLOAD_AFTER_F", {f}, o->start, ef.end);
        if (r->end > eb.start) fail("RELOAD_BEFORE_B", {f, b}, r->end, eb.start);
        if (o->end > r->start) fail("OFFLOAD_BEFORE_RELOAD", {f}, r->start, o->end);
      }
    }
  }

  std::vector<std::vector<Interval>> compute_by_stage(P), transfer_by_stage(P);
  for (const auto& ev : s.compute) {
    compute_by_stage[ev.op.stage - 1].push_back({ev.start, ev.end, ev.op});
  }
  for (const auto& ev : s.transfers) {
    transfer_by_stage[ev.op.stage - 1].push_back({ev.start, ev.end, ev.op});
  }
  for (int i = 0; i < P; ++i) {
    const std::string where = "stage " + std::to_string(i + 1);
    CheckOverlaps(compute_by_stage[i], "EXCL_COMPUTE", where, rep);
    CheckOverlaps(transfer_by_stage[i], "EXCL_TRANSFER", where, rep);
  }
  // Cross-stage overlaps inside a shared channel. Same-stage pairs are already
  // reported above, so they are filtered out here.
  for (const auto& group : inst.topology_groups) {
    if (group.size() < 2) continue;
    std::vector<Interval> ivs;
    for (int st : group) {
      ivs.insert(ivs.end(), transfer_by_stage[st - 1].begin(), transfer_by_stage[st - 1].end());
    }
    ValidationReport tmp;
    CheckOverlaps(ivs, "TOPOLOGY", "shared channel", tmp);
    for (auto& v : tmp.violations) {
      if (v.ops[0].stage != v.ops[1].stage) rep.violations.push_back(std::move(v));
    }
  }

  try {
    MemoryTrace trace = ComputeMemoryTrace(s, inst, semantics);
    for (int i = 0; i < P; ++i) {
      if (trace.peak[i] > inst.mem_limit[i]) {
        fail("MEM_LIMIT", {}, trace.peak[i], inst.mem_limit[i],
             "stage " + std::to_string(i + 1) + ", " + SemanticsName(semantics));
      }
    }
  } catch (const NegativeUsage& e) {
    fail("STRUCTURE", {}, 0, 0, e.what());
  }
  return finish();
}

namespace {

json OpJson(const OpId& op) {
  return json{{"stage", op.stage}, {"microbatch", op.microbatch}};
}

int IntField(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_number_integer()) {
    throw ParseError(where + ": missing integer field '" + key + "'");
  }
  return it->get<int>();
}

Time TimeField(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_number_integer()) {
    throw ParseError(where + ": missing integer field '" + key + "'");
  }
  return it->get<Time>();
}

std::string StrField(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_string()) {
    throw ParseError(where + ": missing string field '" + key + "'");
  }
  return it->get<std::string>();
}

}  // namespace

std::string ScheduleToJson(const Schedule& in) {
  Schedule s = in;
  s.Normalize();
  json doc;
  doc["compute"] = json::array();
  for (const auto& ev : s.compute) {
    json e = OpJson(ev.op);
    e["kind"] = std::string(1, KindChar(ev.op.kind));
    e["start"] = ev.start;
    e["end"] = ev.end;
    doc["compute"].push_back(e);
  }
  doc["transfers"] = json::array();
  for (const auto& ev : s.transfers) {
    json e = OpJson(ev.op);
    e["kind"] = ev.kind == TransferKind::kOffload ? "offload" : "reload";
    e["start"] = ev.start;
    e["end"] = ev.end;
    doc["transfers"].push_back(e);
  }
  doc["offloaded"] = json::array();
  for (const auto& op : s.offloaded) doc["offloaded"].push_back(OpJson(op));
  return doc.dump(1) + "\n";
}

Schedule ParseSchedule(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t line = 1 + std::count(text.begin(),
                                      text.begin() + std::min(e.byte, text.size()),
                                      '\n');
    throw ParseError("line " + std::to_string(line) + ": " + e.what());
  }
  if (!doc.is_object()) throw ParseError("schedule must be a JSON object");
  Schedule s;
  auto list = [&](const char* key) -> const json& {
    auto it = doc.find(key);
    if (it == doc.end() || !it->is_array()) {
      throw ParseError(std::string("missing array '") + key + "'");
    }
    return *it;
  };
  const json& compute = list("compute");
  for (std::size_t k = 0; k < compute.size(); ++k) {
    const std::string w = "compute[" + std::to_string(k) + "]";
    const json& e = compute[k];
    std::string kind = StrField(e, "kind", w);
    if (kind.size() != 1) throw ParseError(w + ": bad kind '" + kind + "'");
    s.compute.push_back({{IntField(e, "stage", w), IntField(e, "microbatch", w),
                          KindFromChar(kind[0])},
                         TimeField(e, "start", w),
                         TimeField(e, "end", w)});
  }
  const json& transfers = list("transfers");
  for (std::size_t k = 0; k < transfers.size(); ++k) {
    const std::string w = "transfers[" + std::to_string(k) + "]";
    const json& e = transfers[k];
    std::string kind = StrField(e, "kind", w);
    TransferKind tk;
    if (kind == "offload") {
      tk = TransferKind::kOffload;
    } else if (kind == "reload") {
      tk = TransferKind::kReload;
    } else {
      throw ParseError(w + ": bad kind '" + kind + "'");
    }
    s.transfers.push_back(
        {{IntField(e, "stage", w), IntField(e, "microbatch", w), OpKind::F}, tk,
         TimeField(e, "start", w), TimeField(e, "end", w)});
  }
  const json& off = list("offloaded");
  for (std::size_t k = 0; k < off.size(); ++k) {
    const std::string w = "offloaded[" + std::to_string(k) + "]";
    s.offloaded.push_back(
        {IntField(off[k], "stage", w), IntField(off[k], "microbatch", w), OpKind::F});
  }
  s.Normalize();
  return s;
}

Schedule LoadSchedule(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open schedule file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ParseSchedule(ss.str());
}

void SaveSchedule(const Schedule& s, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write schedule file " + path.string());
  out << ScheduleToJson(s);
}

double BubbleRatio(const Schedule& s, const PipelineInstance& inst) {
  const Time span = Makespan(s, inst);
  if (span <= 0) return 0.0;
  Time busy = 0;
  for (const auto& ev : s.compute) busy += ev.end - ev.start;
  return 1.0 - static_cast<double>(busy) /
                   (static_cast<double>(inst.num_stages) * static_cast<double>(span));
}

std::vector<int> FillProfile(const Schedule& s, const PipelineInstance& inst) {
  std::vector<std::vector<const ComputeEvent*>> by_stage(inst.num_stages);
  for (const auto& ev : s.compute) by_stage[ev.op.stage - 1].push_back(&ev);
  std::vector<int> fill(inst.num_stages, 0);
  for (int i = 0; i < inst.num_stages; ++i) {
    auto& evs = by_stage[i];
    std::sort(evs.begin(), evs.end(),
              [](auto* a, auto* b) { return std::tie(a->start, a->op) < std::tie(b->start, b->op); });
    for (const auto* ev : evs) {
      if (ev->op.kind == OpKind::B) break;
      if (ev->op.kind == OpKind::F) ++fill[i];
    }
  }
  return fill;
}

}  // namespace pipesched
