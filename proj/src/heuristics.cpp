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

#include "pipesched/heuristics.hpp"

#include <algorithm>
#include <deque>
#include <limits>

#include "pipesched/errors.hpp"

namespace pipesched {

namespace {

constexpr Time kNone = -1;

struct OpState {
  Time start = kNone;
  Time end = kNone;
  bool applied = false;
  bool offloaded = false;
  Time off_start = kNone, off_end = kNone;
  bool off_applied = false;
  Time rel_start = kNone, rel_end = kNone;
};

}  // namespace

std::optional<Schedule> SimulatePlan(const PipelineInstance& inst, const SchedulePlan& plan,
                                     std::string* why) {
  const int P = inst.num_stages;
  const Time tc = inst.comm_time;
  const Time toff = inst.offload_time;
  std::vector<OpState> st(inst.num_ops());
  auto S = [&](const OpId& op) -> OpState& { return st[inst.Index(op)]; };
  for (const auto& op : plan.offloaded) S(op).offloaded = true;

  std::vector<std::size_t> ptr(P, 0);
  std::vector<Time> stage_busy(P, 0);
  std::vector<Time> chan_busy(inst.topology_groups.size(), 0);
  std::vector<Bytes> usage(P, 0);
  std::vector<std::deque<OpId>> pending(P);
  int remaining = inst.num_ops();

  auto fail = [&](const std::string& msg) -> std::optional<Schedule> {
    if (why) *why = msg;
    return std::nullopt;
  };

  // Earliest time `op` could start given what has finished so far, ignoring
  // memory; kNone if a predecessor has not finished yet.
  auto dep_time = [&](const OpId& op) -> Time {
    Time t = 0;
    auto need = [&](const OpId& pre, Time lag) {
      const OpState& p = S(pre);
      if (t == kNone) return;
      if (p.end == kNone) {
        t = kNone;
        return;
      }
      t = std::max(t, p.end + lag);
    };
    switch (op.kind) {
      case OpKind::F:
        if (op.stage > 1) need({op.stage - 1, op.microbatch, OpKind::F}, tc);
        break;
      case OpKind::B:
        need({op.stage, op.microbatch, OpKind::F}, 0);
        if (op.stage < P) need({op.stage + 1, op.microbatch, OpKind::B}, tc);
        if (S({op.stage, op.microbatch, OpKind::F}).offloaded && t != kNone) {
          const OpState& f = S({op.stage, op.microbatch, OpKind::F});
          t = f.rel_end == kNone ? kNone : std::max(t, f.rel_end);
        }
        break;
      case OpKind::W:
        need({op.stage, op.microbatch, OpKind::B}, 0);
        break;
    }
    return t;
  };

  Time t = 0;
  while (remaining > 0) {
    bool progress = true;
    while (progress) {
      progress = false;
      for (int k = 0; k < inst.num_ops(); ++k) {
        OpState& o = st[k];
        const OpId op = inst.OpAt(k);
        if (o.start != kNone && !o.applied && o.end <= t) {
          o.applied = true;
          --remaining;
          progress = true;
          if (op.kind != OpKind::F) usage[op.stage - 1] += inst.Delta(op);
          if (op.kind == OpKind::F && o.offloaded) pending[op.stage - 1].push_back(op);
        }
        if (o.off_start != kNone && !o.off_applied && o.off_end <= t) {
          o.off_applied = true;
          progress = true;
          usage[op.stage - 1] -= inst.Gamma(op);
        }
      }

      for (std::size_t g = 0; g < inst.topology_groups.size(); ++g) {
        if (chan_busy[g] > t) continue;
        std::vector<int> stages = inst.topology_groups[g];
        std::sort(stages.begin(), stages.end());
        std::optional<OpId> reload;
        for (int s : stages) {
          const auto& ord = plan.order[s - 1];
          for (std::size_t q = ptr[s - 1]; q < ord.size() && q < ptr[s - 1] + 2; ++q) {
            const OpId& b = ord[q];
            if (b.kind != OpKind::B) continue;
            const OpId f{b.stage, b.microbatch, OpKind::F};
            const OpState& fs = S(f);
            if (!fs.offloaded || !fs.off_applied || fs.rel_start != kNone) continue;
            Bytes need = inst.Gamma(f);
            const OpId& head = ord[ptr[s - 1]];
            if (q > ptr[s - 1] && head.kind == OpKind::F) need += inst.Delta(head);
            if (usage[s - 1] + need <= inst.Limit(s)) reload = f;
            break;
          }
          if (reload) break;
        }
        if (reload) {
          OpState& fs = S(*reload);
          fs.rel_start = t;
          fs.rel_end = t + toff;
          usage[reload->stage - 1] += inst.Gamma(*reload);
          chan_busy[g] = t + toff;
          progress = true;
          continue;
        }
        int best = -1;
        for (int s : stages) {
          if (pending[s - 1].empty()) continue;
          if (best < 0 || S(pending[s - 1].front()).end < S(pending[best - 1].front()).end) {
            best = s;
          }
        }
        if (best > 0) {
          const OpId f = pending[best - 1].front();
          pending[best - 1].pop_front();
          OpState& fs = S(f);
          fs.off_start = t;
          fs.off_end = t + toff;
          chan_busy[g] = t + toff;
          progress = true;
        }
      }

      for (int s = 1; s <= P; ++s) {
        const auto& ord = plan.order[s - 1];
        if (stage_busy[s - 1] > t || ptr[s - 1] >= ord.size()) continue;
        const OpId& op = ord[ptr[s - 1]];
        const Time ready = dep_time(op);
        if (ready == kNone || ready > t) continue;
        if (op.kind == OpKind::F) {
          if (usage[s - 1] + inst.Delta(op) > inst.Limit(s)) continue;
          usage[s - 1] += inst.Delta(op);
        }
        OpState& o = S(op);
        o.start = t;
        o.end = t + inst.T(op);
        stage_busy[s - 1] = o.end;
        ++ptr[s - 1];
        progress = true;
      }
    }
    if (remaining == 0) break;

    Time next = std::numeric_limits<Time>::max();
    for (const auto& o : st) {
      if (o.start != kNone && !o.applied) next = std::min(next, o.end);
      if (o.off_start != kNone && !o.off_applied) next = std::min(next, o.off_end);
      if (o.rel_end > t) next = std::min(next, o.rel_end);
    }
    for (std::size_t g = 0; g < chan_busy.size(); ++g) {
      if (chan_busy[g] > t) next = std::min(next, chan_busy[g]);
    }
    for (int s = 1; s <= P; ++s) {
      const auto& ord = plan.order[s - 1];
      if (ptr[s - 1] >= ord.size()) continue;
      if (stage_busy[s - 1] > t) next = std::min(next, stage_busy[s - 1]);
      const Time ready = dep_time(ord[ptr[s - 1]]);
      if (ready != kNone && ready > t) next = std::min(next, ready);
    }
    if (next == std::numeric_limits<Time>::max()) {
      for (int s = 1; s <= P; ++s) {
        const auto& ord = plan.order[s - 1];
        if (ptr[s - 1] < ord.size()) {
          return fail("stage " + std::to_string(s) + " stalls at time " + std::to_string(t) +
                      " before " + ToString(ord[ptr[s - 1]]) + " (memory " +
                      std::to_string(usage[s - 1]) + " of " + std::to_string(inst.Limit(s)) +
                      ")");
        }
      }
      return fail("replay stalled at time " + std::to_string(t));
    }
    t = next;
  }

  Schedule out;
  for (int k = 0; k < inst.num_ops(); ++k) {
    const OpState& o = st[k];
    const OpId op = inst.OpAt(k);
    out.compute.push_back({op, o.start, o.end});
    if (o.offloaded) {
      out.offloaded.push_back(op);
      out.transfers.push_back({op, TransferKind::kOffload, o.off_start, o.off_end});
      out.transfers.push_back({op, TransferKind::kReload, o.rel_start, o.rel_end});
    }
  }
  out.Normalize();
  return out;
}

SchedulePlan PatternPlan(const PipelineInstance& inst, const std::vector<int>& fill,
                         bool offload_all) {
  const int m = inst.num_microbatches;
  SchedulePlan plan;
  plan.order.resize(inst.num_stages);
  for (int i = 1; i <= inst.num_stages; ++i) {
    auto& ord = plan.order[i - 1];
    const int f = std::clamp(fill[i - 1], 1, m);
    for (int j = 1; j <= f; ++j) ord.push_back({i, j, OpKind::F});
    for (int k = 1; k <= m; ++k) {
      ord.push_back({i, k, OpKind::B});
      ord.push_back({i, k, OpKind::W});
      if (f + k <= m) ord.push_back({i, f + k, OpKind::F});
    }
  }
  if (offload_all) plan.offloaded = inst.OffloadableOps();
  return plan;
}

std::vector<int> OneFOneBFill(const PipelineInstance& inst) {
  std::vector<int> fill(inst.num_stages);
  for (int i = 1; i <= inst.num_stages; ++i) {
    fill[i - 1] = std::min(inst.num_stages - i + 1, inst.num_microbatches);
  }
  return fill;
}

std::vector<int> AdaFill(const PipelineInstance& inst, Time tolerance) {
  const int P = inst.num_stages;
  const int m = inst.num_microbatches;
  const Time tc = inst.comm_time;
  const Time toff = inst.offload_time;
  std::vector<Time> tf(P, 0), tb(P, 0);
  std::vector<Bytes> df(P, 0), gf(P, 0);
  for (int i = 1; i <= P; ++i) {
    for (int j = 1; j <= m; ++j) {
      tf[i - 1] = std::max(tf[i - 1], inst.T({i, j, OpKind::F}));
      tb[i - 1] = std::max(tb[i - 1], inst.T({i, j, OpKind::B}));
      df[i - 1] = std::max(df[i - 1], inst.Delta({i, j, OpKind::F}));
      gf[i - 1] = std::max(gf[i - 1], inst.Gamma({i, j, OpKind::F}));
    }
  }
  // Earliest start of each stage's first backward along the dependency chain.
  Time down = 0;
  for (int i = 1; i <= P; ++i) down += tf[i - 1] + (i > 1 ? tc : 0);
  std::vector<Time> est(P, 0);
  Time up = down;
  for (int i = P; i >= 1; --i) {
    est[i - 1] = up;
    up += tb[i - 1] + tc;
  }

  const std::vector<int> floor = OneFOneBFill(inst);
  std::vector<int> fill(P, 1);
  std::vector<Time> prev_done(m, 0);  // completion of F_{s-1, j}
  for (int s = 1; s <= P; ++s) {
    std::vector<Time> done(m, 0);
    Time f_done = 0, o_done = 0;
    int count = 0;
    bool open = true;
    for (int j = 0; j < m; ++j) {
      if (j > 0 && std::max(f_done, o_done + toff) >= est[s - 1] + tolerance) open = false;
      const Time start = std::max({f_done, o_done, s > 1 ? prev_done[j] + tc : Time{0}});
      f_done = start + tf[s - 1];
      o_done = f_done + (gf[s - 1] > 0 ? toff : 0);
      done[j] = f_done;
      const Bytes resident = static_cast<Bytes>(j + 1) * (df[s - 1] - gf[s - 1]) + gf[s - 1];
      if (open && resident <= inst.Limit(s)) count = j + 1;
      if (resident > inst.Limit(s)) open = false;
    }
    fill[s - 1] = std::max({count, floor[s - 1], 1});
    prev_done = done;
  }
  return fill;
}

Schedule SequentialSchedule(const PipelineInstance& inst) {
  const int P = inst.num_stages;
  const int m = inst.num_microbatches;
  for (int i = 1; i <= P; ++i) {
    for (int j = 1; j <= m; ++j) {
      if (inst.Delta({i, j, OpKind::F}) > inst.Limit(i)) {
        throw Infeasible("sequential: one activation exceeds memory on stage " +
                         std::to_string(i));
      }
    }
  }
  Schedule s;
  Time base = 0;
  for (int j = 1; j <= m; ++j) {
    Time t = base;
    std::vector<Time> f_end(P + 1, 0);
    for (int i = 1; i <= P; ++i) {
      if (i > 1) t += inst.comm_time;
      const OpId f{i, j, OpKind::F};
      s.compute.push_back({f, t, t + inst.T(f)});
      t += inst.T(f);
      f_end[i] = t;
    }
    Time barrier = t;
    for (int i = P; i >= 1; --i) {
      if (i < P) t += inst.comm_time;
      const OpId b{i, j, OpKind::B}, w{i, j, OpKind::W};
      t = std::max(t, f_end[i]);
      s.compute.push_back({b, t, t + inst.T(b)});
      t += inst.T(b);
      s.compute.push_back({w, t, t + inst.T(w)});
      barrier = std::max(barrier, t + inst.T(w));
    }
    base = barrier;
  }
  s.Normalize();
  return s;
}

namespace {

Schedule RunPlanOrThrow(const PipelineInstance& inst, const SchedulePlan& plan,
                        const char* name) {
  std::string why;
  auto s = SimulatePlan(inst, plan, &why);
  if (!s) throw Infeasible(std::string(name) + ": " + why);
  ValidationReport rep = Validate(*s, inst, MemorySemantics::kStrict);
  if (!rep.ok) throw InvariantViolation(std::string(name) + " produced " + rep.Summary());
  return *s;
}

}  // namespace

Schedule OneFOneB(const PipelineInstance& inst) {
  return RunPlanOrThrow(inst, PatternPlan(inst, OneFOneBFill(inst), false), "1f1b");
}

Schedule PipeOffloadLike(const PipelineInstance& inst) {
  return RunPlanOrThrow(inst, PatternPlan(inst, OneFOneBFill(inst), true), "pipeoffload");
}

Schedule AdaOffload(const PipelineInstance& inst, const AdaParams& p) {
  Schedule best = PipeOffloadLike(inst);
  Time best_span = Makespan(best, inst);
  std::vector<Time> tolerances;
  if (p.tolerance) {
    tolerances.push_back(*p.tolerance);
  } else {
    Time horizon = 0;
    for (const auto& op : inst.AllOps()) horizon += inst.T(op);
    tolerances.push_back(0);
    for (Time t = 1; t <= horizon; t *= 2) tolerances.push_back(t);
  }
  std::vector<std::vector<int>> tried = {OneFOneBFill(inst)};
  for (Time tol : tolerances) {
    std::vector<int> fill = AdaFill(inst, tol);
    if (std::find(tried.begin(), tried.end(), fill) != tried.end()) continue;
    tried.push_back(fill);
    auto dense = SimulatePlan(inst, PatternPlan(inst, fill, true));
    if (!dense || !Validate(*dense, inst, MemorySemantics::kStrict).ok) continue;
    const Time span = Makespan(*dense, inst);
    if (span < best_span) {
      best = std::move(*dense);
      best_span = span;
    }
  }
  return best;
}

const std::vector<std::string>& HeuristicNames() {
  static const std::vector<std::string> kNames = {"ada", "pipeoffload", "1f1b", "sequential"};
  return kNames;
}

NamedSchedule RunHeuristic(const std::string& name, const PipelineInstance& inst,
                           const AdaParams& p) {
  Schedule s;
  if (name == "ada") {
    s = AdaOffload(inst, p);
  } else if (name == "pipeoffload") {
    s = PipeOffloadLike(inst);
  } else if (name == "1f1b") {
    s = OneFOneB(inst);
  } else if (name == "sequential") {
    s = SequentialSchedule(inst);
  } else {
    throw PreconditionViolation("unknown heuristic '" + name + "'");
  }
  return {s, name, Makespan(s, inst)};
}

NamedSchedule BestFeasible(const PipelineInstance& inst, const AdaParams& p) {
  std::optional<NamedSchedule> best;
  std::string reasons;
  for (const auto& name : HeuristicNames()) {
    try {
      NamedSchedule cand = RunHeuristic(name, inst, p);
      if (!best || cand.makespan < best->makespan) best = std::move(cand);
    } catch (const Infeasible& e) {
      reasons += std::string(reasons.empty() ? "" : "; ") + e.what();
    }
  }
  if (!best) throw NoFeasibleSchedule("no heuristic fits: " + reasons);
  return *best;
}

}  // namespace pipesched
