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

// Acceptance suite: one line per criterion, non-zero exit on any failure.

#include <chrono>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "pipesched/cache.hpp"
#include "pipesched/errors.hpp"
#include "pipesched/heuristics.hpp"
#include "pipesched/milp.hpp"
#include "pipesched/online.hpp"
#include "pipesched/solver.hpp"
#include "testing.hpp"

namespace pipesched {
namespace {

using Clock = std::chrono::steady_clock;

double Seconds(Clock::time_point since) {
  return std::chrono::duration<double>(Clock::now() - since).count();
}

struct Result {
  bool pass = true;
  std::string detail;
};

// Every schedule any criterion produced, kept for the memory check.
std::vector<std::pair<PipelineInstance, Schedule>> g_corpus;

void Record(const PipelineInstance& inst, const Schedule& s) { g_corpus.push_back({inst, s}); }

std::vector<NamedSchedule> Heuristics(const PipelineInstance& inst) {
  std::vector<NamedSchedule> out;
  for (const auto& name : HeuristicNames()) {
    try {
      out.push_back(RunHeuristic(name, inst));
      Record(inst, out.back().schedule);
    } catch (const Infeasible&) {
    }
  }
  return out;
}

SolveOutcome SolveAndRecord(const PipelineInstance& inst, const ModelOptions& opts, SolveBudget budget = {},
                            std::optional<Schedule> warm = std::nullopt,
                            MemorySemantics sem = MemorySemantics::kStrict) {
  SolveOutcome o = Solve(inst, opts, budget, std::move(warm), sem);
  if (o.incumbent && sem == MemorySemantics::kStrict) Record(inst, *o.incumbent);
  return o;
}

SolveBudget Limit(double seconds) {
  SolveBudget b;
  b.wall_time_limit = std::chrono::milliseconds(static_cast<long long>(seconds * 1000));
  return b;
}

Result OracleEquivalence() {
  const std::pair<int, int> shapes[] = {{1, 2}, {1, 3}, {1, 4}, {2, 1}, {2, 2}, {3, 1}, {4, 1}};
  int agree = 0, optimal = 0;
  double slowest = 0;
  std::ostringstream bad;
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    const auto [P, m] = shapes[seed % 7];
    PipelineInstance inst = RandomInstance(seed, P, m, {1, 4}, MemProfile::kMixed);
    auto t0 = Clock::now();
    SolveOutcome o = SolveAndRecord(inst, ModelOptions::For(inst), Limit(10));
    const double took = Seconds(t0);
    slowest = std::max(slowest, took);
    SolveOutcome oracle = BruteForceOracle(inst);
    const bool same = o.status == oracle.status && o.incumbent_makespan == oracle.incumbent_makespan && took < 10 &&
                      (o.status == SolveStatus::kOptimal || o.status == SolveStatus::kInfeasible);
    if (same) ++agree;
    if (same && o.status == SolveStatus::kOptimal) ++optimal;
    if (!same) bad << " seed" << seed;
  }
  Result r;
  r.pass = agree == 50 && slowest < 10;
  r.detail = std::to_string(agree) + "/50 agree (" + std::to_string(optimal) +
             " optimal, rest infeasible for both), slowest solve " + std::to_string(slowest) + " s" +
             bad.str();
  return r;
}

Result OptionInvariance() {
  int agree = 0;
  std::ostringstream bad;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const int P = 1 + seed % 3, m = 1 + (seed / 3) % 2;
    PipelineInstance inst = RandomInstance(100 + seed, P, m, {1, 4}, MemProfile::kMixed);
    bool same = true;
    for (auto sem : {MemorySemantics::kMilpRelaxed, MemorySemantics::kStrict}) {
      std::optional<Time> ref;
      for (int mask = 0; mask < 8; ++mask) {
        ModelOptions o = ModelOptions::For(inst);
        o.fix_microbatch_order = mask & 1;
        o.eliminate_transitive = mask & 2;
        o.triangle_cuts = mask & 4;
        SolveOutcome out = SolveAndRecord(inst, o, {}, std::nullopt, sem);
        if (out.status != SolveStatus::kOptimal && out.status != SolveStatus::kInfeasible) same = false;
        if (!ref) ref = out.incumbent_makespan;
        same = same && *ref == out.incumbent_makespan;
      }
    }
    if (same) {
      ++agree;
    } else {
      bad << " seed" << seed;
    }
  }
  return {agree == 20, std::to_string(agree) + "/20 instances identical across 8 option sets x 2 semantics" + bad.str()};
}

Result ThreeActivationFamily() {
  auto t0 = Clock::now();
  bool ordered = true, valid = true, strict_gap = false;
  std::ostringstream rows;
  for (int P : {2, 3, 4}) {
    for (int m : {2, 4, 6}) {
      PipelineInstance inst = MakeUniformInstance(P, m, 1, 1, 1, 0, 1, 2, 3);
      Schedule ada = AdaOffload(inst);
      Schedule po = PipeOffloadLike(inst);
      Record(inst, ada);
      Record(inst, po);
      SolveOutcome ex = SolveAndRecord(inst, ModelOptions::For(inst), Limit(3), ada);
      if (!ex.incumbent) {
        ordered = false;
        continue;
      }
      const Time e = ex.incumbent_makespan, a = Makespan(ada, inst), p = Makespan(po, inst);
      ordered = ordered && e <= a && a <= p;
      strict_gap = strict_gap || a < p;
      for (const Schedule* s : {&ada, &po, &*ex.incumbent}) {
        valid = valid && Validate(*s, inst, MemorySemantics::kStrict).ok;
        for (Bytes pk : testing::ReplayPeaks(*s, inst, false)) valid = valid && pk <= 3 * 2;
      }
      rows << " " << P << "x" << m << ":" << e << (ex.status == SolveStatus::kOptimal ? "" : "*") << "/"
           << a << "/" << p;
    }
  }
  const double secs = Seconds(t0);
  Result r;
  r.pass = ordered && valid && strict_gap && secs < 60;
  r.detail = "exact/ada/pipeoffload" + rows.str() + " (* = budget hit), " + std::to_string(secs) + " s";
  return r;
}

Result WarmStartFeasibility() {
  int schedules = 0, with_residual = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    PipelineInstance inst = RandomInstance(200 + seed, 1 + seed % 4, 1 + seed % 4, {1, 4}, MemProfile::kMixed);
    MilpModel model = BuildModel(inst, ModelOptions::For(inst));
    for (const auto& h : Heuristics(inst)) {
      ++schedules;
      if (!CheckResiduals(model, EncodeSchedule(h.schedule, model, inst), 1e-6).empty()) ++with_residual;
    }
  }
  return {with_residual == 0 && schedules > 0,
          std::to_string(schedules) + " heuristic schedules, " + std::to_string(with_residual) + " with residuals"};
}

Result LpRoundTrip() {
  int ok = 0;
  std::ostringstream bad;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    PipelineInstance inst = RandomInstance(300 + seed, 1 + seed % 3, 2, {1, 4}, MemProfile::kTight);
    const SolveOutcome internal = Solve(inst, ModelOptions::For(inst), {}, std::nullopt, MemorySemantics::kMilpRelaxed);
    if (!internal.incumbent) {
      bad << " seed" << seed << ":no-optimum";
      continue;
    }
    const std::string lp = ExportLp(BuildModel(inst, ModelOptions::For(inst)));
    // The reference solver reads the model back from the LP text.
    auto opts = LpOptions(lp);
    if (!opts) continue;
    MilpModel model = BuildModel(inst, *opts);
    if (ExportLp(model) != lp) continue;
    SolveOutcome ext = Solve(inst, *opts, {}, std::nullopt, MemorySemantics::kMilpRelaxed);
    const std::string sol = WriteSolution(model, EncodeWarmStart(*ext.incumbent, model, inst));
    Schedule s = DecodeSolution(model, ParseSolution(model, sol), inst);
    if (Makespan(s, inst) == internal.incumbent_makespan && Validate(s, inst, MemorySemantics::kMilpRelaxed).ok) {
      ++ok;
    } else {
      bad << " seed" << seed;
    }
  }
  return {ok == 10, std::to_string(ok) + "/10 decoded makespans equal the internal optimum" + bad.str()};
}

Result CacheEfficacy() {
  auto db_path = testing::TempPath("acceptance_cache.db");
  std::filesystem::remove(db_path);
  Cache db(db_path);
  int scaled_ok = 0, perturbed_ok = 0, seeded = 0;
  std::ostringstream bad;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    PipelineInstance inst = RandomInstance(400 + seed, 2, 2, {2, 6}, MemProfile::kMixed);
    SolveOutcome o = SolveAndRecord(inst, ModelOptions::For(inst));
    if (o.status != SolveStatus::kOptimal) continue;
    ++seeded;
    db.Store(MakeEntry(inst, *o.incumbent));

    PipelineInstance twice = testing::ScaleTimes(inst, 2);
    WarmStart w = WarmStartFromCache(&db, twice);
    Record(twice, w.schedule);
    if (w.source == "cache" && w.makespan == 2 * o.incumbent_makespan) {
      ++scaled_ok;
    } else {
      bad << " scaled-seed" << seed << ":" << w.source << "=" << w.makespan;
    }

    PipelineInstance near = inst;
    near.proc_time[0][0][1] += 1;
    CacheKey a = Discretize(inst), b = Discretize(near);
    bool within = true;
    for (std::size_t k = 0; k < a.steps.size(); ++k) within = within && std::llabs(a.steps[k] - b.steps[k]) <= 1;
    if (!within) {
      near = inst;
      within = true;
    }
    WarmStart wn = WarmStartFromCache(&db, near);
    Record(near, wn.schedule);
    if (Validate(wn.schedule, near, MemorySemantics::kStrict).ok && wn.makespan <= BestFeasible(near).makespan) {
      ++perturbed_ok;
    } else {
      bad << " near-seed" << seed;
    }
  }
  return {seeded > 0 && scaled_ok == seeded && perturbed_ok == seeded,
          std::to_string(scaled_ok) + "/" + std::to_string(seeded) + " scaled hits at exactly 2x, " +
              std::to_string(perturbed_ok) + "/" + std::to_string(seeded) + " perturbed within best_feasible" +
              bad.str()};
}

Result AnytimeOnline() {
  bool stream_ok = true;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    PipelineInstance inst = RandomInstance(500 + seed, 2, 2, {1, 4}, MemProfile::kMixed);
    SolveSession session(inst, ModelOptions::For(inst), Limit(5), std::nullopt);
    Time last = kInfiniteTime;
    while (true) {
      StreamItem it = session.Next();
      if (it.terminal) break;
      stream_ok = stream_ok && it.incumbent.makespan < last &&
                  Validate(it.incumbent.schedule, inst, MemorySemantics::kStrict).ok;
      last = it.incumbent.makespan;
      Record(inst, it.incumbent.schedule);
    }
  }
  PipelineInstance tiny = MakeUniformInstance(2, 2, 1, 1, 1, 1, 1, 2, 2);
  const Time opt = BruteForceOracle(tiny).incumbent_makespan;
  const Time ada = Makespan(AdaOffload(tiny), tiny);
  std::vector<Time> totals;
  for (long long ms : {0, 50, 500}) {
    SolveBudget b;
    b.wall_time_limit = std::chrono::milliseconds(ms);
    totals.push_back(OnlineSim(tiny, 10, b).total);
  }
  const bool monotone = totals[0] >= totals[1] && totals[1] >= totals[2];
  return {stream_ok && opt < ada && monotone,
          std::string("streams strictly decreasing: ") + (stream_ok ? "yes" : "no") + "; tiny optimum " +
              std::to_string(opt) + " < ada " + std::to_string(ada) + "; totals at 0/50/500 ms = " +
              std::to_string(totals[0]) + "/" + std::to_string(totals[1]) + "/" + std::to_string(totals[2])};
}

Result BaselineSanity() {
  int cases = 0, wrong = 0;
  std::ostringstream bad;
  for (int P = 1; P <= 4; ++P) {
    for (int m = 1; m <= 8; ++m) {
      for (int limit = 1; limit <= 5; ++limit) {
        PipelineInstance inst = MakeUniformInstance(P, m, 1, 1, 1, 1, 1, 2, limit);
        ++cases;
        bool feasible = true;
        try {
          Schedule s = OneFOneB(inst);
          Record(inst, s);
          for (int i = 1; i <= P; ++i) {
            if (testing::InFlight(s, i) > std::min(P - i + 1, m)) {
              ++wrong;
              bad << " " << P << "x" << m << "/" << limit << ":stage" << i;
            }
          }
        } catch (const Infeasible&) {
          feasible = false;
        }
        if (feasible != (std::min(P, m) <= limit)) {
          ++wrong;
          bad << " " << P << "x" << m << "/" << limit << ":oom";
        }
      }
    }
  }
  return {wrong == 0, std::to_string(cases - wrong) + "/" + std::to_string(cases) +
                          " uniform cases within the in-flight bound and infeasible exactly above it" + bad.str()};
}

Result MemorySafety() {
  // Adds a broader corpus, then checks everything recorded so far.
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    PipelineInstance inst = RandomInstance(600 + seed, 1 + seed % 4, 1 + (seed / 4) % 4, {1, 4}, MemProfile::kMixed);
    auto hs = Heuristics(inst);
    std::optional<Schedule> warm;
    if (!hs.empty()) warm = hs.front().schedule;
    SolveAndRecord(inst, ModelOptions::For(inst), Limit(0.5), warm);
  }
  int bad = 0;
  for (const auto& [inst, s] : g_corpus) {
    std::vector<Bytes> final_usage;
    auto peak = testing::ReplayPeaks(s, inst, false, &final_usage);
    MemoryTrace tr = ComputeMemoryTrace(s, inst, MemorySemantics::kStrict);
    for (int i = 0; i < inst.num_stages; ++i) {
      if (peak[i] > inst.mem_limit[i] || final_usage[i] != 0 || tr.peak[i] != peak[i] || tr.final_usage[i] != 0) {
        ++bad;
        break;
      }
    }
  }
  return {bad == 0, std::to_string(g_corpus.size()) + " schedules, " + std::to_string(bad) + " over a limit or not zero-sum"};
}

}  // namespace
}  // namespace pipesched

int main() {
  using namespace pipesched;
  struct Criterion {
    const char* name;
    std::function<Result()> run;
  };
  // Memory safety runs last so it sees every schedule the others produced.
  const std::vector<Criterion> criteria = {
      {"1 oracle equivalence", OracleEquivalence},
      {"2 model-option invariance", OptionInvariance},
      {"3 three-activation family ordering", ThreeActivationFamily},
      {"4 warm-start feasibility", WarmStartFeasibility},
      {"5 LP round trip", LpRoundTrip},
      {"7 cache efficacy", CacheEfficacy},
      {"8 anytime and online contract", AnytimeOnline},
      {"9 1F1B baseline sanity", BaselineSanity},
      {"6 memory safety", MemorySafety},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    Result r;
    try {
      r = c.run();
    } catch (const std::exception& e) {
      r = {false, std::string("threw: ") + e.what()};
    }
    std::printf("%s  %s: %s\n", r.pass ? "PASS" : "FAIL", c.name, r.detail.c_str());
    std::fflush(stdout);
    failed += !r.pass;
  }
  return failed == 0 ? 0 : 1;
}
