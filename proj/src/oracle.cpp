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

#include <algorithm>
#include <chrono>
#include <string>
#include <unordered_map>
#include <vector>

#include "pipesched/errors.hpp"
#include "pipesched/solver.hpp"

namespace pipesched {

namespace {

// Unit-step dynamic program over the full machine state. At every instant
// each idle stage may start one compute op and each idle channel one
// transfer; memory is checked after every change at that instant.
class Oracle {
 public:
  Oracle(const PipelineInstance& inst, MemorySemantics sem, bool post)
      : inst_(inst), strict_(sem == MemorySemantics::kStrict), post_(post) {
    P_ = inst.num_stages;
    n_ = inst.num_ops();
    off_ = inst.OffloadableOps();
    off_of_.assign(n_, -1);
    for (std::size_t k = 0; k < off_.size(); ++k) off_of_[inst.Index(off_[k])] = static_cast<int>(k);
    cap_ = inst.comm_time;
    toff_ = inst.offload_time;
  }

  SolveOutcome Run() {
    const auto t0 = std::chrono::steady_clock::now();
    St init;
    init.op.assign(n_, kNotStarted);
    init.tr.assign(off_.size(), kResident);
    init.offset.assign(P_, -1);
    const int best = Value(init);
    SolveOutcome out;
    out.stats.nodes = memo_.size();
    if (best >= kInf) {
      out.status = SolveStatus::kInfeasible;
    } else {
      out.status = SolveStatus::kOptimal;
      out.incumbent = Reconstruct(init);
      PipelineInstance check = inst_;
      check.post_validation = post_;
      ValidationReport rep = Validate(*out.incumbent, check, strict_ ? MemorySemantics::kStrict
                                                                     : MemorySemantics::kMilpRelaxed);
      if (!rep.ok || Makespan(*out.incumbent, check) != best) {
        throw InvariantViolation("oracle schedule does not replay: " + rep.Summary());
      }
      out.incumbent_makespan = best;
      out.lower_bound = best;
    }
    out.stats.elapsed_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return out;
  }

 private:
  static constexpr int kInf = 1 << 29;
  static constexpr int kNotStarted = 0;  // op: >0 running remaining, <0 done (-1 - age)
  static constexpr int kResident = 0;    // transfer: 1..toff offloading remaining
  static constexpr int kOff = 1000;      // 1000+r reloading remaining r
  static constexpr int kBack = 2000;

  struct St {
    std::vector<int> op;
    std::vector<int> tr;
    std::vector<int> offset;  // post mode: time since first F start; -2 once finished
    int finished = 0;         // post mode: largest span of a finished stage
  };

  struct Start {
    int event;  // compute index, or n_ + 2k (offload) / n_ + 2k + 1 (reload)
  };

  std::string Key(const St& s) const {
    std::string k;
    k.reserve((s.op.size() + s.tr.size() + s.offset.size()) * 2 + 4);
    auto put = [&](int v) {
      k.push_back(static_cast<char>(v & 0xff));
      k.push_back(static_cast<char>((v >> 8) & 0xff));
    };
    for (int v : s.op) put(v);
    for (int v : s.tr) put(v);
    if (post_) {
      for (int v : s.offset) put(v);
      put(s.finished);
    }
    return k;
  }

  bool DoneAt(const St& s, int e, int min_age) const {
    return s.op[e] < 0 && (-1 - s.op[e]) >= min_age;
  }

  bool AllDone(const St& s) const {
    return std::all_of(s.op.begin(), s.op.end(), [](int v) { return v < 0; });
  }

  bool Eligible(const St& s, int e) const {
    if (s.op[e] != kNotStarted) return false;
    const OpId op = inst_.OpAt(e);
    switch (op.kind) {
      case OpKind::F:
        return op.stage == 1 ||
               DoneAt(s, inst_.Index({op.stage - 1, op.microbatch, OpKind::F}), cap_);
      case OpKind::B: {
        const int f = inst_.Index({op.stage, op.microbatch, OpKind::F});
        if (!DoneAt(s, f, 0)) return false;
        if (op.stage < P_ &&
            !DoneAt(s, inst_.Index({op.stage + 1, op.microbatch, OpKind::B}), cap_)) {
          return false;
        }
        const int k = off_of_[f];
        return k < 0 || s.tr[k] == kResident || s.tr[k] == kBack;
      }
      case OpKind::W:
        return DoneAt(s, inst_.Index({op.stage, op.microbatch, OpKind::B}), 0);
    }
    return false;
  }

  bool TransferEligible(const St& s, int k, bool reload) const {
    const int f = inst_.Index(off_[k]);
    if (reload) return s.tr[k] == kOff;
    const int b = inst_.Index({off_[k].stage, off_[k].microbatch, OpKind::B});
    return s.tr[k] == kResident && DoneAt(s, f, 0) && s.op[b] == kNotStarted;
  }

  bool StageBusy(const St& s, int stage) const {
    for (int j = 1; j <= inst_.num_microbatches; ++j) {
      for (OpKind c : kAllKinds) {
        if (s.op[inst_.Index({stage, j, c})] > 0) return true;
      }
    }
    return false;
  }

  bool ChannelBusy(const St& s, int group) const {
    for (std::size_t k = 0; k < off_.size(); ++k) {
      if (inst_.GroupOf(off_[k].stage) != group) continue;
      const int v = s.tr[k];
      if ((v > 0 && v < kOff) || (v > kOff && v < kBack)) return true;
    }
    return false;
  }

  bool MemoryOk(const St& s) const {
    std::vector<Bytes> use(P_, 0);
    for (int e = 0; e < n_; ++e) {
      if (s.op[e] < 0) use[inst_.OpAt(e).stage - 1] += inst_.Delta(inst_.OpAt(e));
    }
    for (std::size_t k = 0; k < off_.size(); ++k) {
      const int v = s.tr[k];
      const Bytes g = inst_.Gamma(off_[k]);
      const bool freed = strict_ ? v >= kOff : v != kResident;
      const bool back = v > kOff;
      use[off_[k].stage - 1] += (back ? g : 0) - (freed ? g : 0);
    }
    for (int i = 0; i < P_; ++i) {
      if (use[i] > inst_.Limit(i + 1)) return false;
    }
    return true;
  }

  // Applies starts at the current instant; false if memory is exceeded.
  bool ApplyStarts(St& s, const std::vector<Start>& starts) const {
    for (const Start& st : starts) {
      if (st.event < n_) {
        const OpId op = inst_.OpAt(st.event);
        s.op[st.event] = static_cast<int>(inst_.T(op));
        if (post_ && op.kind == OpKind::F && s.offset[op.stage - 1] == -1) s.offset[op.stage - 1] = 0;
      } else {
        const int k = (st.event - n_) / 2;
        const bool reload = ((st.event - n_) & 1) != 0;
        s.tr[k] = reload ? kOff + static_cast<int>(toff_) : static_cast<int>(toff_);
      }
    }
    // An offload may not start at the instant its backward starts.
    for (std::size_t k = 0; k < off_.size(); ++k) {
      const int b = inst_.Index({off_[k].stage, off_[k].microbatch, OpKind::B});
      if (s.tr[k] == static_cast<int>(toff_) && s.op[b] > 0) return false;
    }
    return MemoryOk(s);
  }

  bool Moving(const St& s) const {
    for (int v : s.op) {
      if (v > 0) return true;
      if (v < 0 && -1 - v < cap_) return true;
    }
    for (int v : s.tr) {
      if ((v > 0 && v < kOff) || (v > kOff && v < kBack)) return true;
    }
    return false;
  }

  St Advance(const St& s) const {
    St t = s;
    for (int& v : t.op) {
      if (v > 0) {
        v = v == 1 ? -1 : v - 1;
      } else if (v < 0) {
        v = std::max(v - 1, -1 - cap_);
      }
    }
    for (int& v : t.tr) {
      if (v > 0 && v < kOff) v = v == 1 ? kOff : v - 1;
      else if (v > kOff && v < kBack) v = v == kOff + 1 ? kBack : v - 1;
    }
    if (post_) {
      for (int i = 0; i < P_; ++i) {
        if (t.offset[i] < 0) continue;
        ++t.offset[i];
        bool done = true;
        for (int j = 1; j <= inst_.num_microbatches && done; ++j) {
          for (OpKind c : kAllKinds) done = done && t.op[inst_.Index({i + 1, j, c})] < 0;
        }
        if (done) {
          t.finished = std::max(t.finished, t.offset[i]);
          t.offset[i] = -2;
        }
      }
    }
    return t;
  }

  void Choices(const St& s, std::vector<std::vector<Start>>& out) const {
    std::vector<std::vector<int>> slots;
    for (int i = 1; i <= P_; ++i) {
      if (StageBusy(s, i)) continue;
      std::vector<int> opts{-1};
      for (int j = 1; j <= inst_.num_microbatches; ++j) {
        for (OpKind c : kAllKinds) {
          const int e = inst_.Index({i, j, c});
          if (Eligible(s, e)) opts.push_back(e);
        }
      }
      if (opts.size() > 1) slots.push_back(std::move(opts));
    }
    for (std::size_t g = 0; g < inst_.topology_groups.size(); ++g) {
      if (ChannelBusy(s, static_cast<int>(g))) continue;
      std::vector<int> opts{-1};
      for (std::size_t k = 0; k < off_.size(); ++k) {
        if (inst_.GroupOf(off_[k].stage) != static_cast<int>(g)) continue;
        if (TransferEligible(s, static_cast<int>(k), false)) opts.push_back(n_ + 2 * static_cast<int>(k));
        if (TransferEligible(s, static_cast<int>(k), true)) opts.push_back(n_ + 2 * static_cast<int>(k) + 1);
      }
      if (opts.size() > 1) slots.push_back(std::move(opts));
    }
    std::vector<std::size_t> pick(slots.size(), 0);
    while (true) {
      std::vector<Start> starts;
      for (std::size_t q = 0; q < slots.size(); ++q) {
        if (slots[q][pick[q]] >= 0) starts.push_back({slots[q][pick[q]]});
      }
      out.push_back(std::move(starts));
      std::size_t q = 0;
      while (q < slots.size() && ++pick[q] == slots[q].size()) pick[q++] = 0;
      if (q == slots.size()) break;
    }
  }

  // Remaining cost from `s`: time to finish (global span) or final largest
  // per-stage span (post mode).
  int Value(const St& s) {
    if (AllDone(s)) {
      if (!MemoryOk(s)) return kInf;
      return post_ ? s.finished : 0;
    }
    const std::string key = Key(s);
    if (auto it = memo_.find(key); it != memo_.end()) return it->second;
    memo_[key] = kInf;
    int best = kInf;
    std::vector<std::vector<Start>> choices;
    Choices(s, choices);
    for (const auto& c : choices) {
      St t = s;
      if (!ApplyStarts(t, c)) continue;
      if (!Moving(t)) continue;
      const int v = Value(Advance(t));
      if (v >= kInf) continue;
      best = std::min(best, post_ ? v : v + 1);
    }
    memo_[key] = best;
    return best;
  }

  Schedule Reconstruct(St s) {
    Schedule out;
    Time t = 0;
    while (!AllDone(s)) {
      const int target = Value(s);
      std::vector<std::vector<Start>> choices;
      Choices(s, choices);
      bool moved = false;
      for (const auto& c : choices) {
        St n = s;
        if (!ApplyStarts(n, c) || !Moving(n)) continue;
        St a = Advance(n);
        const int v = Value(a);
        if (v >= kInf || (post_ ? v : v + 1) != target) continue;
        for (const Start& st : c) {
          if (st.event < n_) {
            const OpId op = inst_.OpAt(st.event);
            out.compute.push_back({op, t, t + inst_.T(op)});
          } else {
            const int k = (st.event - n_) / 2;
            const bool reload = ((st.event - n_) & 1) != 0;
            out.transfers.push_back({off_[k], reload ? TransferKind::kReload : TransferKind::kOffload,
                                     t, t + toff_});
            if (!reload) out.offloaded.push_back(off_[k]);
          }
        }
        s = std::move(a);
        moved = true;
        break;
      }
      if (!moved) throw InvariantViolation("oracle reconstruction lost the optimal path");
      ++t;
    }
    out.Normalize();
    return out;
  }

  const PipelineInstance& inst_;
  bool strict_;
  bool post_;
  int P_ = 0;
  int n_ = 0;
  int cap_ = 0;
  Time toff_ = 0;
  std::vector<OpId> off_;
  std::vector<int> off_of_;
  std::unordered_map<std::string, int> memo_;
};

}  // namespace

SolveOutcome BruteForceOracle(const PipelineInstance& inst, MemorySemantics semantics,
                              bool post_validation) {
  if (inst.num_ops() > 12) {
    throw PreconditionViolation("oracle handles at most 12 compute ops, got " +
                                std::to_string(inst.num_ops()));
  }
  const auto off = inst.OffloadableOps();
  if (off.size() > 4) {
    throw PreconditionViolation("oracle handles at most 4 offloadable ops, got " +
                                std::to_string(off.size()));
  }
  if (!off.empty() && inst.offload_time < 1) {
    throw PreconditionViolation("oracle needs offload_time >= 1 when ops are offloadable");
  }
  Oracle o(inst, semantics, post_validation);
  return o.Run();
}

}  // namespace pipesched
