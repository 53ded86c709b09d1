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

#include "pipesched/solver.hpp"

#include <algorithm>
#include "json.hpp"

#include "pipesched/errors.hpp"

namespace pipesched {

namespace {

constexpr Time kNone = std::numeric_limits<Time>::min() / 4;

using Clock = std::chrono::steady_clock;

// Every event is placed at its "point": the instant its memory effect lands.
// Compute ops take effect at their end, reloads at their start, offloads at
// their start (relaxed) or end (strict). Events are dispatched in point order.
class Search {
 public:
  Search(const PipelineInstance& inst, const ModelOptions& opts, const SolveBudget& budget,
         MemorySemantics sem, const IncumbentCallback& cb, const std::atomic<bool>* cancel)
      : inst_(inst),
        opts_(opts),
        model_(BuildModel(inst, opts)),
        budget_(budget),
        sem_(sem),
        cb_(cb),
        cancel_(cancel),
        start_(Clock::now()) {
    P_ = inst.num_stages;
    n_ = inst.num_ops();
    off_ops_ = inst.OffloadableOps();
    off_of_.assign(n_, -1);
    for (std::size_t k = 0; k < off_ops_.size(); ++k) off_of_[inst.Index(off_ops_[k])] = static_cast<int>(k);
    group_.resize(P_);
    for (int s = 1; s <= P_; ++s) group_[s - 1] = inst.GroupOf(s);
    toff_ = inst.offload_time;
    strict_ = sem == MemorySemantics::kStrict;

    deps_.resize(n_);
    same_stage_before_.resize(n_);
    const int m = inst.num_microbatches;
    for (int e = 0; e < n_; ++e) {
      const OpId op = inst.OpAt(e);
      if (op.kind == OpKind::F && op.stage > 1) {
        deps_[e].push_back({inst.Index({op.stage - 1, op.microbatch, OpKind::F}), inst.comm_time});
      }
      if (op.kind == OpKind::B) {
        deps_[e].push_back({inst.Index({op.stage, op.microbatch, OpKind::F}), 0});
        if (op.stage < P_) {
          deps_[e].push_back({inst.Index({op.stage + 1, op.microbatch, OpKind::B}), inst.comm_time});
        }
      }
      if (op.kind == OpKind::W) deps_[e].push_back({inst.Index({op.stage, op.microbatch, OpKind::B}), 0});
      for (int j = 1; j <= m; ++j) {
        for (OpKind k : kAllKinds) {
          const OpId other{op.stage, j, k};
          if (other == op) continue;
          if (model_.FixedOrder(other, op).value_or(false)) same_stage_before_[e].push_back(inst.Index(other));
        }
      }
    }

    tail_.assign(n_, 0);
    for (int i = 1; i <= P_; ++i) {
      for (int j = 1; j <= m; ++j) {
        const int b = inst.Index({i, j, OpKind::B});
        Time t = inst.T({i, j, OpKind::W});
        if (i > 1) {
          const int up = inst.Index({i - 1, j, OpKind::B});
          t = std::max(t, inst.comm_time + inst.T(inst.OpAt(up)) + tail_[up]);
        }
        tail_[b] = t;
      }
    }
    for (int i = P_; i >= 1; --i) {
      for (int j = 1; j <= m; ++j) {
        const int f = inst.Index({i, j, OpKind::F});
        const int b = inst.Index({i, j, OpKind::B});
        Time t = inst.T(inst.OpAt(b)) + tail_[b];
        if (i < P_) {
          const int down = inst.Index({i + 1, j, OpKind::F});
          t = std::max(t, inst.comm_time + inst.T(inst.OpAt(down)) + tail_[down]);
        }
        tail_[f] = t;
      }
    }
    // Topological order for head propagation: forwards down, backwards up, then W.
    for (int i = 1; i <= P_; ++i)
      for (int j = 1; j <= m; ++j) topo_.push_back(inst.Index({i, j, OpKind::F}));
    for (int i = P_; i >= 1; --i)
      for (int j = 1; j <= m; ++j) topo_.push_back(inst.Index({i, j, OpKind::B}));
    for (int i = 1; i <= P_; ++i)
      for (int j = 1; j <= m; ++j) topo_.push_back(inst.Index({i, j, OpKind::W}));

    static_lb_ = 0;
    for (int i = 1; i <= P_; ++i) {
      Time work = 0;
      for (int j = 1; j <= m; ++j) {
        for (OpKind k : kAllKinds) work += inst.T({i, j, k});
        const int f = inst.Index({i, j, OpKind::F});
        const int w = inst.Index({i, j, OpKind::W});
        static_lb_ = std::max(static_lb_, ChainWithin(f, w));
      }
      static_lb_ = std::max(static_lb_, work);
    }
  }

  Time RootBound() {
    State s = Initial();
    return Bound(s);
  }

  void Install(const Schedule& s, Time makespan) {
    best_ = makespan;
    best_schedule_ = s;
    Emit();
  }

  std::optional<Schedule> best_schedule_;
  Time best_ = kInfiniteTime;
  SolveStats stats_;
  bool stopped_ = false;
  bool gap_stop_ = false;
  Time root_lb_ = 0;

  void Run() {
    root_lb_ = RootBound();
    if (GapReached()) {
      gap_stop_ = best_ > root_lb_;
      return;
    }
    State s = Initial();
    Dfs(s);
  }

  double ElapsedMs() const {
    return std::chrono::duration<double, std::milli>(Clock::now() - start_).count();
  }

 private:
  struct Dep {
    int op;
    Time lag;
  };

  struct State {
    std::vector<Time> point;  // per event; kNone if not dispatched
    std::vector<Time> stage_last;
    std::vector<Time> compute_free;
    std::vector<Time> channel_free;
    std::vector<Bytes> usage;
    std::vector<char> touched;
    std::vector<Time> rem_work;
    std::vector<int> seq;  // dispatch order
    Time tau = kNone;
    Time max_end = 0;
    int remaining = 0;
  };

  bool IsTransfer(int e) const { return e >= n_; }
  int OffK(int e) const { return (e - n_) / 2; }
  bool IsReload(int e) const { return ((e - n_) & 1) != 0; }
  int OffloadEvent(int k) const { return n_ + 2 * k; }
  int ReloadEvent(int k) const { return n_ + 2 * k + 1; }
  int NumEvents() const { return n_ + 2 * static_cast<int>(off_ops_.size()); }
  int StageOf(int e) const {
    return IsTransfer(e) ? off_ops_[OffK(e)].stage : inst_.OpAt(e).stage;
  }

  // Offload start given its point.
  Time OffloadStart(Time point) const { return strict_ ? point - toff_ : point; }

  Time ChainWithin(int f, int w) const {
    // F start to W end on the same stage through the deepest dependency path.
    const OpId op = inst_.OpAt(f);
    Time t = inst_.T(op);
    Time down = 0;
    for (int i = op.stage + 1; i <= P_; ++i) {
      down += inst_.comm_time + inst_.T({i, op.microbatch, OpKind::F});
    }
    Time up = 0;
    for (int i = P_; i > op.stage; --i) {
      up += inst_.T({i, op.microbatch, OpKind::B}) + inst_.comm_time;
    }
    return t + down + up + inst_.T({op.stage, op.microbatch, OpKind::B}) + inst_.T(inst_.OpAt(w));
  }

  State Initial() const {
    State s;
    s.point.assign(NumEvents(), kNone);
    s.stage_last.assign(P_, kNone);
    s.compute_free.assign(P_, 0);
    s.channel_free.assign(inst_.topology_groups.size(), 0);
    s.usage.assign(P_, 0);
    s.touched.assign(P_, 0);
    s.rem_work.assign(P_, 0);
    for (int e = 0; e < n_; ++e) s.rem_work[inst_.OpAt(e).stage - 1] += inst_.T(inst_.OpAt(e));
    s.remaining = n_;
    return s;
  }

  bool Done(const State& s, int e) const { return s.point[e] != kNone; }

  // Point at which `e` would land if dispatched next, or nullopt if it is
  // not eligible.
  std::optional<Time> PointOf(const State& s, int e) const {
    if (Done(s, e)) return std::nullopt;
    if (!IsTransfer(e)) {
      const OpId op = inst_.OpAt(e);
      const int st = op.stage - 1;
      Time ready = s.compute_free[st];
      for (const Dep& d : deps_[e]) {
        if (!Done(s, d.op)) return std::nullopt;
        ready = std::max(ready, s.point[d.op] + d.lag);
      }
      for (int b : same_stage_before_[e]) {
        if (!Done(s, b)) return std::nullopt;
      }
      if (op.kind == OpKind::B) {
        const int k = off_of_[inst_.Index({op.stage, op.microbatch, OpKind::F})];
        if (k >= 0 && Done(s, OffloadEvent(k))) {
          if (!Done(s, ReloadEvent(k))) return std::nullopt;
          ready = std::max(ready, s.point[ReloadEvent(k)] + toff_);
        }
      }
      return std::max(ready + inst_.T(op), s.stage_last[st]);
    }
    const int k = OffK(e);
    const OpId& x = off_ops_[k];
    const int st = x.stage - 1;
    const int f = inst_.Index(x);
    const int b = inst_.Index({x.stage, x.microbatch, OpKind::B});
    const Time chan = s.channel_free[group_[st]];
    if (!IsReload(e)) {
      if (!Done(s, f) || Done(s, b)) return std::nullopt;
      const Time start = std::max(s.point[f], chan);
      const Time pt = strict_ ? start + toff_ : start;
      return std::max(pt, s.stage_last[st]);
    }
    const int o = OffloadEvent(k);
    if (!Done(s, o)) return std::nullopt;
    const Time start = std::max({OffloadStart(s.point[o]) + toff_, chan, s.stage_last[st]});
    return start;
  }

  bool Independent(int a, int b) const {
    const int sa = StageOf(a), sb = StageOf(b);
    if (sa == sb) return false;
    if (IsTransfer(a) && IsTransfer(b) && group_[sa - 1] == group_[sb - 1]) return false;
    return true;
  }

  // Returns false when the memory check at the previous instant fails.
  bool Apply(State& s, int e, Time pt) const {
    if (pt > s.tau) {
      for (int st = 0; st < P_; ++st) {
        if (s.touched[st] && s.usage[st] > inst_.Limit(st + 1)) return false;
        s.touched[st] = 0;
      }
      s.tau = pt;
    }
    s.point[e] = pt;
    s.seq.push_back(e);
    const int st = StageOf(e) - 1;
    s.stage_last[st] = pt;
    s.touched[st] = 1;
    if (!IsTransfer(e)) {
      const OpId op = inst_.OpAt(e);
      s.usage[st] += inst_.Delta(op);
      s.compute_free[st] = pt;
      s.rem_work[st] -= inst_.T(op);
      s.max_end = std::max(s.max_end, pt);
      --s.remaining;
    } else {
      const OpId& x = off_ops_[OffK(e)];
      const Time start = IsReload(e) ? pt : OffloadStart(pt);
      s.channel_free[group_[st]] = start + toff_;
      s.usage[st] += IsReload(e) ? inst_.Gamma(x) : -inst_.Gamma(x);
    }
    return true;
  }

  bool MemoryOk(const State& s) const {
    for (int st = 0; st < P_; ++st) {
      if (s.touched[st] && s.usage[st] > inst_.Limit(st + 1)) return false;
    }
    return true;
  }

  Time Bound(const State& s) const {
    if (opts_.post_validation) return static_lb_;
    std::vector<Time> head(n_, 0);
    std::vector<Time> min_head(P_, kInfiniteTime);
    Time lb = s.max_end;
    for (int e : topo_) {
      if (Done(s, e)) continue;
      const OpId op = inst_.OpAt(e);
      const int st = op.stage - 1;
      Time h = std::max(s.compute_free[st], s.tau - inst_.T(op));
      for (const Dep& d : deps_[e]) {
        const Time end = Done(s, d.op) ? s.point[d.op] : head[d.op] + inst_.T(inst_.OpAt(d.op));
        h = std::max(h, end + d.lag);
      }
      if (op.kind == OpKind::B) {
        const int k = off_of_[inst_.Index({op.stage, op.microbatch, OpKind::F})];
        if (k >= 0 && Done(s, OffloadEvent(k))) {
          if (Done(s, ReloadEvent(k))) {
            h = std::max(h, s.point[ReloadEvent(k)] + toff_);
          } else {
            const Time rs = std::max(OffloadStart(s.point[OffloadEvent(k)]) + toff_,
                                     s.channel_free[group_[st]]);
            h = std::max(h, rs + toff_);
          }
        }
      }
      head[e] = h;
      min_head[st] = std::min(min_head[st], h);
      lb = std::max(lb, h + inst_.T(op) + tail_[e]);
    }
    for (int st = 0; st < P_; ++st) {
      if (s.rem_work[st] > 0) lb = std::max(lb, min_head[st] + s.rem_work[st]);
    }
    return lb;
  }

  bool OutOfBudget() {
    if (stopped_) return true;
    if (stats_.nodes >= budget_.node_limit) stopped_ = true;
    if ((stats_.nodes & 255) == 0) {
      if (cancel_ && cancel_->load()) stopped_ = true;
      if (ElapsedMs() >= static_cast<double>(budget_.wall_time_limit.count())) stopped_ = true;
    }
    return stopped_;
  }

  bool GapReached() const {
    if (best_ == kInfiniteTime) return false;
    if (best_ <= root_lb_) return true;
    return budget_.target_gap > 0 &&
           static_cast<double>(best_ - root_lb_) / static_cast<double>(best_) <= budget_.target_gap;
  }

  Schedule Build(const State& s, const std::vector<Time>* retimed = nullptr) const {
    const std::vector<Time>& pt = retimed ? *retimed : s.point;
    Schedule out;
    for (int e = 0; e < n_; ++e) {
      const OpId op = inst_.OpAt(e);
      out.compute.push_back({op, pt[e] - inst_.T(op), pt[e]});
    }
    for (std::size_t k = 0; k < off_ops_.size(); ++k) {
      const int o = OffloadEvent(static_cast<int>(k));
      if (s.point[o] == kNone) continue;
      const int r = ReloadEvent(static_cast<int>(k));
      out.offloaded.push_back(off_ops_[k]);
      const Time os = OffloadStart(pt[o]);
      out.transfers.push_back({off_ops_[k], TransferKind::kOffload, os, os + toff_});
      out.transfers.push_back({off_ops_[k], TransferKind::kReload, pt[r], pt[r] + toff_});
    }
    out.Normalize();
    return out;
  }

  // Difference-constraint re-timing for the per-stage span objective. Keeps
  // the dispatch sequence and returns the tightest span found, with times.
  std::optional<std::pair<Time, std::vector<Time>>> Retime(const State& s, Time target) const {
    const int ev = NumEvents();
    const int z = ev + P_;  // zero reference
    const int V = z + 1;
    struct Edge {
      int u, v;
      Time w;  // x_v <= x_u + w
    };
    std::vector<Edge> base;
    auto le = [&](int a, int b, Time w) { base.push_back({b, a, w}); };  // x_a <= x_b + w
    auto T = [&](int e) { return IsTransfer(e) ? Time{0} : inst_.T(inst_.OpAt(e)); };
    const Time soff = strict_ ? toff_ : 0;
    for (int e = 0; e < n_; ++e) {
      for (const Dep& d : deps_[e]) le(d.op, e, -T(e) - d.lag);
      le(z, e, -T(e));
      const int st = inst_.OpAt(e).stage - 1;
      le(ev + st, e, -T(e));
    }
    for (std::size_t k = 0; k < off_ops_.size(); ++k) {
      const int o = OffloadEvent(static_cast<int>(k));
      if (s.point[o] == kNone) continue;
      const int r = ReloadEvent(static_cast<int>(k));
      const int f = inst_.Index(off_ops_[k]);
      const int b = inst_.Index({off_ops_[k].stage, off_ops_[k].microbatch, OpKind::B});
      le(f, o, -soff);
      le(o, r, soff - toff_);
      le(r, b, -toff_ - inst_.T(inst_.OpAt(b)));
      le(z, o, -soff);
    }
    std::vector<int> last_compute(P_, -1), last_event(P_, -1), last_chan(inst_.topology_groups.size(), -1);
    for (int e : s.seq) {
      const int st = StageOf(e) - 1;
      if (last_event[st] >= 0) {
        const int u = last_event[st];
        le(u, e, 0);
        if (s.point[u] == s.point[e]) le(e, u, 0);
      }
      last_event[st] = e;
      if (!IsTransfer(e)) {
        if (last_compute[st] >= 0) le(last_compute[st], e, -T(e));
        last_compute[st] = e;
      } else {
        const int g = group_[st];
        if (last_chan[g] >= 0) {
          const int u = last_chan[g];
          const Time uend = IsReload(u) ? toff_ : toff_ - soff;
          const Time vstart = IsReload(e) ? 0 : -soff;
          // start_e >= end_u
          le(u, e, vstart - uend);
        }
        last_chan[g] = e;
      }
    }
    auto feasible = [&](Time c, std::vector<Time>* sol) {
      std::vector<Edge> edges = base;
      for (int e = 0; e < n_; ++e) {
        const int st = inst_.OpAt(e).stage - 1;
        edges.push_back({ev + st, e, c});  // x_e <= S + c
      }
      std::vector<Time> dist(V, 0);
      for (int it = 0; it < V; ++it) {
        bool changed = false;
        for (const Edge& ed : edges) {
          if (dist[ed.u] + ed.w < dist[ed.v]) {
            dist[ed.v] = dist[ed.u] + ed.w;
            changed = true;
          }
        }
        if (!changed) {
          if (sol) {
            for (int e = 0; e < ev; ++e) dist[e] -= dist[z];
            *sol = std::vector<Time>(dist.begin(), dist.begin() + ev);
          }
          return true;
        }
      }
      return false;
    };
    if (!feasible(target, nullptr)) return std::nullopt;
    Time lo = static_lb_, hi = target;
    while (lo < hi) {
      const Time mid = lo + (hi - lo) / 2;
      if (feasible(mid, nullptr)) hi = mid; else lo = mid + 1;
    }
    std::vector<Time> sol;
    feasible(hi, &sol);
    for (int e = 0; e < ev; ++e) {
      if (s.point[e] == kNone) sol[e] = kNone;
    }
    return std::make_pair(hi, sol);
  }

  void Leaf(const State& s) {
    if (!MemoryOk(s)) {
      ++stats_.pruned_memory;
      return;
    }
    Schedule sched = Build(s);
    Time value = s.max_end;
    if (opts_.post_validation) {
      value = Makespan(sched, inst_);
      const Time target = std::min(value, best_ - 1);
      if (value >= best_ && target < static_lb_) return;
      if (auto r = Retime(s, target)) {
        Schedule alt = Build(s, &r->second);
        if (Validate(alt, inst_, sem_).ok) {
          const Time v = Makespan(alt, inst_);
          if (v < value) {
            value = v;
            sched = std::move(alt);
          }
        }
      }
    }
    if (value >= best_) return;
    if (!Validate(sched, inst_, sem_).ok) {
      throw InvariantViolation("search produced an invalid schedule");
    }
    auto res = CheckResiduals(model_, EncodeSchedule(sched, model_, inst_));
    if (!res.empty()) {
      throw InvariantViolation("schedule violates model row " + res.front().row);
    }
    best_ = value;
    best_schedule_ = std::move(sched);
    Emit();
  }

  void Emit() {
    if (!cb_) return;
    Incumbent inc{*best_schedule_, best_, std::min(root_lb_, best_), ElapsedMs(), stats_.nodes};
    cb_(inc);
  }

  void Dfs(const State& s) {
    if (OutOfBudget()) return;
    ++stats_.nodes;
    if (s.remaining == 0) {
      Leaf(s);
      return;
    }
    if (Bound(s) >= best_) {
      ++stats_.pruned_bound;
      return;
    }
    struct Child {
      Time pt;
      int e;
    };
    std::vector<Child> kids;
    const int last = s.seq.empty() ? -1 : s.seq.back();
    for (int e = 0; e < NumEvents(); ++e) {
      auto pt = PointOf(s, e);
      if (!pt || *pt < s.tau) continue;
      if (*pt == s.tau && last >= 0 && e < last && Independent(last, e)) continue;
      kids.push_back({*pt, e});
    }
    std::sort(kids.begin(), kids.end(), [](const Child& a, const Child& b) {
      return a.pt != b.pt ? a.pt < b.pt : a.e < b.e;
    });
    for (const Child& c : kids) {
      State next = s;
      if (!Apply(next, c.e, c.pt)) {
        ++stats_.pruned_memory;
        continue;
      }
      Dfs(next);
      if (stopped_) return;
      if (GapReached()) {
        gap_stop_ = best_ > root_lb_;
        return;
      }
    }
  }

  const PipelineInstance& inst_;
  ModelOptions opts_;
  MilpModel model_;
  SolveBudget budget_;
  MemorySemantics sem_;
  IncumbentCallback cb_;
  const std::atomic<bool>* cancel_;
  Clock::time_point start_;

  int P_ = 0;
  int n_ = 0;
  Time toff_ = 0;
  bool strict_ = true;
  std::vector<OpId> off_ops_;
  std::vector<int> off_of_;
  std::vector<int> group_;
  std::vector<std::vector<Dep>> deps_;
  std::vector<std::vector<int>> same_stage_before_;
  std::vector<Time> tail_;
  std::vector<int> topo_;
  Time static_lb_ = 0;
};

}  // namespace

const char* StatusName(SolveStatus s) {
  switch (s) {
    case SolveStatus::kOptimal: return "Optimal";
    case SolveStatus::kFeasible: return "Feasible";
    case SolveStatus::kInfeasible: return "Infeasible";
    case SolveStatus::kUnknown: return "Unknown";
  }
  return "Unknown";
}

std::string OutcomeToJson(const SolveOutcome& o) {
  nlohmann::json j;
  j["status"] = StatusName(o.status);
  if (o.incumbent_makespan == kInfiniteTime) {
    j["incumbent_makespan"] = nullptr;
  } else {
    j["incumbent_makespan"] = o.incumbent_makespan;
  }
  j["lower_bound"] = o.lower_bound;
  j["has_incumbent"] = o.incumbent.has_value();
  j["warm_rejected"] = o.warm_rejected;
  j["stats"] = {{"nodes", o.stats.nodes},
                {"pruned_bound", o.stats.pruned_bound},
                {"pruned_memory", o.stats.pruned_memory},
                {"elapsed_ms", o.stats.elapsed_ms}};
  return j.dump(1);
}

SolveOutcome Solve(const PipelineInstance& inst_in, const ModelOptions& opts,
                   const SolveBudget& budget, const std::optional<Schedule>& warm,
                   MemorySemantics semantics, const IncumbentCallback& on_incumbent,
                   const std::atomic<bool>* cancel) {
  PipelineInstance inst = inst_in;
  inst.post_validation = opts.post_validation;
  Search search(inst, opts, budget, semantics, on_incumbent, cancel);
  SolveOutcome out;
  search.root_lb_ = search.RootBound();
  if (warm) {
    ValidationReport rep = Validate(*warm, inst, semantics);
    if (rep.ok) {
      Schedule w = *warm;
      w.Normalize();
      search.Install(w, Makespan(w, inst));
    } else {
      out.warm_rejected = true;
    }
  }
  search.Run();
  out.stats = search.stats_;
  out.stats.elapsed_ms = search.ElapsedMs();
  out.incumbent = search.best_schedule_;
  out.incumbent_makespan = search.best_;
  const bool complete = !search.stopped_ && !search.gap_stop_;
  if (out.incumbent) {
    const bool proven = search.best_ <= search.root_lb_ || complete;
    out.status = proven ? SolveStatus::kOptimal : SolveStatus::kFeasible;
    out.lower_bound = proven ? search.best_ : std::min(search.root_lb_, search.best_);
  } else {
    out.status = complete ? SolveStatus::kInfeasible : SolveStatus::kUnknown;
    out.lower_bound = search.root_lb_;
  }
  return out;
}

SolveSession::SolveSession(PipelineInstance inst, ModelOptions opts, SolveBudget budget,
                           std::optional<Schedule> warm, MemorySemantics semantics) {
  worker_ = std::thread([this, inst = std::move(inst), opts, budget, warm = std::move(warm),
                         semantics]() {
    SolveOutcome out;
    try {
      out = Solve(inst, opts, budget, warm, semantics,
                  [this](const Incumbent& inc) {
                    std::lock_guard<std::mutex> lock(mu_);
                    queue_.push_back({inc, false, SolveStatus::kFeasible});
                    cv_.notify_all();
                  },
                  &cancel_);
    } catch (...) {
      out.status = SolveStatus::kUnknown;
    }
    std::lock_guard<std::mutex> lock(mu_);
    StreamItem last;
    last.terminal = true;
    last.status = out.status;
    if (out.incumbent) {
      last.incumbent = {*out.incumbent, out.incumbent_makespan, out.lower_bound,
                        out.stats.elapsed_ms, out.stats.nodes};
    } else {
      last.incumbent.makespan = kInfiniteTime;
      last.incumbent.lower_bound = out.lower_bound;
    }
    queue_.push_back(std::move(last));
    outcome_ = std::move(out);
    done_ = true;
    cv_.notify_all();
  });
}

SolveSession::~SolveSession() {
  cancel_ = true;
  if (worker_.joinable()) worker_.join();
}

StreamItem SolveSession::Next() {
  std::unique_lock<std::mutex> lock(mu_);
  if (closed_) throw SessionClosed("incumbent stream already terminated");
  cv_.wait(lock, [this] { return !queue_.empty(); });
  StreamItem item = std::move(queue_.front());
  queue_.pop_front();
  if (item.terminal) closed_ = true;
  return item;
}

const SolveOutcome& SolveSession::Outcome() {
  if (worker_.joinable()) worker_.join();
  return outcome_;
}

}  // namespace pipesched
