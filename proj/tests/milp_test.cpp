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

#include <gtest/gtest.h>

#include <sstream>

#include "pipesched/errors.hpp"
#include "pipesched/heuristics.hpp"
#include "pipesched/milp.hpp"
#include "pipesched/solver.hpp"
#include "testing.hpp"

namespace pipesched {
namespace {

int CountFamily(const MilpModel& m, VarFamily f) {
  int n = 0;
  for (const auto& v : m.vars) n += v.id.family == f;
  return n;
}

ModelOptions Opts(bool fix, bool elim, bool cuts, bool post = false) {
  ModelOptions o;
  o.fix_microbatch_order = fix;
  o.eliminate_transitive = elim;
  o.triangle_cuts = cuts;
  o.post_validation = post;
  return o;
}

PipelineInstance NoActivations(PipelineInstance inst) {
  for (auto& st : inst.act_size) {
    for (auto& mb : st) mb = {0, 0, 0};
  }
  return inst;
}

std::optional<Schedule> OffloadingSchedule(const PipelineInstance& inst) {
  SolveOutcome o = Solve(inst, ModelOptions::For(inst), {}, std::nullopt, MemorySemantics::kStrict);
  if (!o.incumbent || o.incumbent->offloaded.empty()) return std::nullopt;
  return o.incumbent;
}

std::string DropLine(const std::string& text, const std::string& prefix) {
  std::istringstream in(text);
  std::ostringstream out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind(prefix, 0) == 0) continue;
    out << line << "\n";
  }
  return out.str();
}

TEST(VarName, RoundTripsEveryColumn) {
  PipelineInstance inst = MakeUniformInstance(2, 2, 1, 1, 1, 1, 1, 2, 2);
  MilpModel m = BuildModel(inst, Opts(false, false, false));
  for (const auto& v : m.vars) {
    auto back = ParseVarName(VarName(v.id));
    ASSERT_TRUE(back) << VarName(v.id);
    EXPECT_EQ(*back, v.id);
  }
  EXPECT_EQ(VarName(VarId::Single(VarFamily::E, {2, 1, OpKind::W})), "F_E_2_1_3");
  EXPECT_EQ(VarName(VarId::Pair(VarFamily::P, {1, 2, OpKind::F}, {1, 3, OpKind::B})), "B_P_1_2_1__1_3_2");
}

TEST(BuildModel, SingleChainHasNoOrderingFreedom) {
  PipelineInstance inst = NoActivations(MakeUniformInstance(1, 1, 1, 1, 1, 0, 1, 2, 3));
  MilpModel m = BuildModel(inst, ModelOptions::For(inst));
  EXPECT_EQ(CountFamily(m, VarFamily::E), 3);
  EXPECT_EQ(CountFamily(m, VarFamily::C), 1);
  EXPECT_EQ(CountFamily(m, VarFamily::P), 0);
  for (VarFamily f : {VarFamily::K, VarFamily::L, VarFamily::M, VarFamily::N, VarFamily::H,
                      VarFamily::Wv, VarFamily::O, VarFamily::R}) {
    EXPECT_EQ(CountFamily(m, f), 0) << FamilyName(f);
  }
}

TEST(BuildModel, FixedOrderRemovesSameKindPairs) {
  PipelineInstance inst = MakeUniformInstance(2, 2, 1, 1, 1, 1, 1, 2, 2);
  MilpModel fixed = BuildModel(inst, Opts(true, false, false));
  MilpModel free = BuildModel(inst, Opts(false, false, false));
  auto same_kind = [](const MilpModel& m) {
    int n = 0;
    for (const auto& v : m.vars) {
      n += v.id.family == VarFamily::P && v.id.a.stage == v.id.b.stage && v.id.a.kind == v.id.b.kind;
    }
    return n;
  };
  EXPECT_EQ(same_kind(fixed), 0);
  EXPECT_GT(same_kind(free), 0);
  for (int i = 1; i <= 2; ++i) {
    for (OpKind c : kAllKinds) {
      EXPECT_EQ(fixed.FixedOrder({i, 1, c}, {i, 2, c}), true);
      EXPECT_EQ(fixed.FixedOrder({i, 2, c}, {i, 1, c}), false);
    }
  }
}

TEST(BuildModel, OnlyUpperTriangleMaterialized) {
  PipelineInstance inst = MakeUniformInstance(2, 3, 1, 1, 1, 1, 1, 2, 2);
  MilpModel m = BuildModel(inst, Opts(true, false, false));
  for (const auto& v : m.vars) {
    if (v.id.family == VarFamily::P) EXPECT_LT(v.id.a, v.id.b) << VarName(v.id);
  }
}

TEST(BuildModel, TransferColumnsOnlyForActivations) {
  PipelineInstance inst = MakeUniformInstance(2, 2, 1, 1, 1, 1, 1, 2, 2);
  MilpModel m = BuildModel(inst, ModelOptions::For(inst));
  EXPECT_EQ(CountFamily(m, VarFamily::Wv), 4);
  EXPECT_EQ(CountFamily(m, VarFamily::O), 4);
  EXPECT_EQ(CountFamily(m, VarFamily::R), 4);
  for (const auto& v : m.vars) {
    if (v.id.family == VarFamily::Wv) EXPECT_EQ(v.id.a.kind, OpKind::F);
  }
}

TEST(BuildModel, MakespanRowsFollowFlag) {
  PipelineInstance inst = MakeUniformInstance(2, 2, 1, 1, 1, 1, 1, 2, 2);
  auto global = BuildModel(inst, Opts(true, true, false, false)).CountByTag();
  auto stage = BuildModel(inst, Opts(true, true, false, true)).CountByTag();
  EXPECT_GT(global["EQ17"], 0);
  EXPECT_EQ(global["EQ16"], 0);
  EXPECT_GT(stage["EQ16"], 0);
  EXPECT_EQ(stage["EQ17"], 0);
}

TEST(BuildModel, TopologyRowsOnlyForSharedGroups) {
  PipelineInstance inst = MakeUniformInstance(2, 1, 1, 1, 1, 1, 1, 2, 2);
  EXPECT_EQ(BuildModel(inst, ModelOptions::For(inst)).CountByTag()["TOPO"], 0);
  inst.topology_groups = {{1, 2}};
  EXPECT_GT(BuildModel(inst, ModelOptions::For(inst)).CountByTag()["TOPO"], 0);
  ModelOptions off = ModelOptions::For(inst);
  off.topology_enabled = false;
  EXPECT_EQ(BuildModel(inst, off).CountByTag()["TOPO"], 0);
}

TEST(BuildModel, TransitiveEliminationKeepsOptimum) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    PipelineInstance inst = RandomInstance(seed, 2, 2, {1, 3}, MemProfile::kMixed);
    SolveOutcome on = Solve(inst, Opts(true, true, false), {}, std::nullopt, MemorySemantics::kMilpRelaxed);
    SolveOutcome off = Solve(inst, Opts(true, false, false), {}, std::nullopt, MemorySemantics::kMilpRelaxed);
    ASSERT_EQ(on.status, SolveStatus::kOptimal);
    ASSERT_EQ(off.status, SolveStatus::kOptimal);
    EXPECT_EQ(on.incumbent_makespan, off.incumbent_makespan) << "seed " << seed;
  }
}

TEST(GenTriangleCuts, NoneWhenEverythingFixed) {
  PipelineInstance inst = MakeUniformInstance(1, 1, 1, 1, 1, 0, 1, 2, 3);
  MilpModel m = BuildModel(inst, Opts(true, true, false));
  EXPECT_EQ(GenTriangleCuts(m, 1000), 0);
}

TEST(GenTriangleCuts, CountsFreeTriples) {
  PipelineInstance inst = MakeUniformInstance(1, 3, 1, 1, 1, 0, 1, 2, 3);
  MilpModel m = BuildModel(inst, Opts(false, true, false));
  // A triple is free when no two of its ops belong to the same micro-batch,
  // whose F, B, W order is forced.
  int free = 0;
  std::vector<OpId> ops = inst.AllOps();
  for (std::size_t x = 0; x < ops.size(); ++x) {
    for (std::size_t y = x + 1; y < ops.size(); ++y) {
      for (std::size_t z = y + 1; z < ops.size(); ++z) {
        free += ops[x].microbatch != ops[y].microbatch && ops[y].microbatch != ops[z].microbatch &&
                ops[x].microbatch != ops[z].microbatch;
      }
    }
  }
  EXPECT_EQ(free, 27);
  const int before = static_cast<int>(m.constraints.size());
  EXPECT_EQ(GenTriangleCuts(m, 1000), 2 * free);
  EXPECT_EQ(static_cast<int>(m.constraints.size()), before + 2 * free);
  EXPECT_EQ(m.CountByTag()["TRICUT"], 2 * free);

  MilpModel capped = BuildModel(inst, Opts(false, true, false));
  EXPECT_EQ(GenTriangleCuts(capped, 5), 5);
  EXPECT_EQ(GenTriangleCuts(capped, 0), 0);
}

TEST(GenTriangleCuts, Deterministic) {
  PipelineInstance inst = MakeUniformInstance(2, 2, 1, 1, 1, 1, 1, 2, 2);
  MilpModel a = BuildModel(inst, Opts(false, true, false));
  MilpModel b = BuildModel(inst, Opts(false, true, false));
  GenTriangleCuts(a, 50);
  GenTriangleCuts(b, 50);
  EXPECT_EQ(ExportLp(a), ExportLp(b));
}

TEST(GenTriangleCuts, ImpliedByEveryTotalOrder) {
  // ab + bc - ac <= 1 and ac - ab - bc <= 0 over the six orders of three ops.
  const int perms[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
  for (const auto& p : perms) {
    auto before = [&](int u, int v) {
      int pu = 0, pv = 0;
      for (int k = 0; k < 3; ++k) {
        if (p[k] == u) pu = k;
        if (p[k] == v) pv = k;
      }
      return pu < pv ? 1 : 0;
    };
    const int ab = before(0, 1), bc = before(1, 2), ac = before(0, 2);
    EXPECT_LE(ab + bc - ac, 1);
    EXPECT_LE(ac - ab - bc, 0);
  }
}

TEST(GenTriangleCuts, OptimumUnchanged) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    PipelineInstance inst = RandomInstance(seed, 1 + seed % 3, 2, {1, 3}, MemProfile::kMixed);
    SolveOutcome with = Solve(inst, Opts(false, true, true), {}, std::nullopt, MemorySemantics::kMilpRelaxed);
    SolveOutcome without = Solve(inst, Opts(false, true, false), {}, std::nullopt, MemorySemantics::kMilpRelaxed);
    EXPECT_EQ(with.status, without.status);
    EXPECT_EQ(with.incumbent_makespan, without.incumbent_makespan) << "seed " << seed;
  }
}

TEST(ExportLp, SingleChain) {
  PipelineInstance inst = MakeUniformInstance(1, 1, 1, 1, 1, 0, 1, 2, 3);
  const std::string lp = ExportLp(BuildModel(inst, ModelOptions::For(inst)));
  ASSERT_NE(lp.find("Minimize"), std::string::npos);
  const auto obj = lp.find("Minimize");
  const auto st = lp.find("Subject To");
  ASSERT_NE(st, std::string::npos);
  const std::string objective = lp.substr(obj, st - obj);
  EXPECT_NE(objective.find("F_C"), std::string::npos) << objective;
  EXPECT_EQ(objective.find("F_E"), std::string::npos) << objective;
  for (const char* section : {"Bounds", "Binary", "End"}) {
    EXPECT_NE(lp.find(section), std::string::npos) << section;
  }
}

TEST(ExportLp, Deterministic) {
  PipelineInstance inst = RandomInstance(7, 2, 2, {1, 3}, MemProfile::kTight);
  MilpModel m = BuildModel(inst, ModelOptions::For(inst));
  EXPECT_EQ(ExportLp(m), ExportLp(m));
  EXPECT_EQ(ExportLp(m), ExportLp(BuildModel(inst, ModelOptions::For(inst))));
}

TEST(ExportLp, OptionsHeaderRoundTrips) {
  PipelineInstance inst = MakeUniformInstance(2, 2, 1, 1, 1, 1, 1, 2, 2);
  ModelOptions o = Opts(false, true, true, true);
  o.triangle_cut_budget = 17;
  auto back = LpOptions(ExportLp(BuildModel(inst, o)));
  ASSERT_TRUE(back);
  EXPECT_FALSE(back->fix_microbatch_order);
  EXPECT_TRUE(back->eliminate_transitive);
  EXPECT_TRUE(back->triangle_cuts);
  EXPECT_TRUE(back->post_validation);
  EXPECT_EQ(back->triangle_cut_budget, 17);
  EXPECT_FALSE(LpOptions("Minimize\n obj: x\nEnd\n"));
}

TEST(ExportLp, SolutionRoundTripDecodesValidSchedule) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    PipelineInstance inst = RandomInstance(seed, 2, 2, {1, 3}, MemProfile::kTight);
    MilpModel m = BuildModel(inst, ModelOptions::For(inst));
    SolveOutcome o = Solve(inst, ModelOptions::For(inst), {}, std::nullopt, MemorySemantics::kMilpRelaxed);
    if (!o.incumbent) continue;
    const std::string sol = WriteSolution(m, EncodeWarmStart(*o.incumbent, m, inst));
    Schedule s = DecodeSolution(m, ParseSolution(m, sol), inst);
    EXPECT_TRUE(Validate(s, inst, MemorySemantics::kMilpRelaxed).ok) << "seed " << seed;
    EXPECT_EQ(Makespan(s, inst), o.incumbent_makespan);
  }
}

TEST(ParseSolution, RoundTrip) {
  PipelineInstance inst = MakeUniformInstance(2, 2, 1, 1, 1, 1, 1, 2, 2);
  MilpModel m = BuildModel(inst, ModelOptions::For(inst));
  Assignment a = EncodeWarmStart(AdaOffload(inst), m, inst);
  EXPECT_EQ(ParseSolution(m, WriteSolution(m, a)), a);
}

TEST(ParseSolution, UnknownName) {
  PipelineInstance inst = MakeUniformInstance(2, 2, 1, 1, 1, 1, 1, 2, 2);
  MilpModel m = BuildModel(inst, ModelOptions::For(inst));
  EXPECT_THROW(ParseSolution(m, "B_P_9_9_9__1_1_1 1\n"), UnknownVariable);
  EXPECT_THROW(ParseSolution(m, "not_a_column 1\n"), UnknownVariable);
}

TEST(ParseSolution, FractionalBinary) {
  PipelineInstance inst = MakeUniformInstance(2, 2, 1, 1, 1, 1, 1, 2, 2);
  MilpModel m = BuildModel(inst, ModelOptions::For(inst));
  EXPECT_THROW(ParseSolution(m, "B_Wv_1_1_1 0.4\n"), NonIntegralBinary);
  Assignment a = ParseSolution(m, "B_Wv_1_1_1 0.9999999\n");
  EXPECT_EQ(a.Get(m, VarId::Single(VarFamily::Wv, {1, 1, OpKind::F})), 1.0);
  EXPECT_EQ(a.Get(m, VarId::Single(VarFamily::Wv, {1, 2, OpKind::F})), 0.0);
}

TEST(ParseSolution, MalformedValue) {
  PipelineInstance inst = MakeUniformInstance(1, 1, 1, 1, 1, 0, 1, 2, 3);
  MilpModel m = BuildModel(inst, ModelOptions::For(inst));
  EXPECT_THROW(ParseSolution(m, "F_C abc\n"), ParseError);
}

TEST(DecodeSolution, SolverAssignmentValidates) {
  PipelineInstance inst = MakeUniformInstance(2, 2, 1, 1, 1, 1, 1, 2, 2);
  MilpModel m = BuildModel(inst, ModelOptions::For(inst));
  SolveOutcome o = Solve(inst, ModelOptions::For(inst), {}, std::nullopt, MemorySemantics::kMilpRelaxed);
  ASSERT_TRUE(o.incumbent);
  Schedule s = DecodeSolution(m, EncodeWarmStart(*o.incumbent, m, inst), inst);
  EXPECT_TRUE(Validate(s, inst, MemorySemantics::kMilpRelaxed).ok);
}

TEST(DecodeSolution, EndBeforeDurationIsResidual) {
  PipelineInstance inst = MakeUniformInstance(1, 1, 1, 1, 1, 0, 1, 2, 3);
  MilpModel m = BuildModel(inst, ModelOptions::For(inst));
  Assignment a = EncodeWarmStart(SequentialSchedule(inst), m, inst);
  a.values[m.Require(VarId::Single(VarFamily::E, {1, 1, OpKind::F}))] = 0;
  EXPECT_THROW(DecodeSolution(m, a, inst), ConstraintResidual);
}

TEST(DecodeSolution, MissingOffloadStartIsSyncResidual) {
  PipelineInstance inst = MakeUniformInstance(2, 2, 1, 1, 1, 1, 1, 2, 1);
  auto s = OffloadingSchedule(inst);
  ASSERT_TRUE(s);
  MilpModel m = BuildModel(inst, ModelOptions::For(inst));
  const OpId op = s->offloaded.front();
  const std::string o_name = VarName(VarId::Single(VarFamily::O, op));
  const std::string sol = DropLine(WriteSolution(m, EncodeWarmStart(*s, m, inst)), o_name + " ");
  ASSERT_EQ(sol.find(o_name + " "), std::string::npos);
  Assignment a = ParseSolution(m, sol);
  try {
    DecodeSolution(m, a, inst);
    FAIL() << "decoded";
  } catch (const ConstraintResidual& e) {
    EXPECT_NE(std::string(e.what()).find("EQ12"), std::string::npos) << e.what();
  }
}

TEST(EncodeWarmStart, HeuristicsHaveNoResiduals) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    PipelineInstance inst = RandomInstance(seed, 1 + seed % 3, 1 + seed % 3, {1, 3}, MemProfile::kMixed);
    MilpModel m = BuildModel(inst, ModelOptions::For(inst));
    for (const auto& name : HeuristicNames()) {
      Schedule s;
      try {
        s = RunHeuristic(name, inst).schedule;
      } catch (const Infeasible&) {
        continue;
      }
      Assignment a = EncodeWarmStart(s, m, inst);
      EXPECT_TRUE(CheckResiduals(m, a).empty()) << name << " seed " << seed;
    }
  }
}

TEST(EncodeWarmStart, DecodePreservesMakespan) {
  PipelineInstance inst = MakeUniformInstance(3, 4, 1, 1, 1, 0, 1, 2, 3);
  MilpModel m = BuildModel(inst, ModelOptions::For(inst));
  Schedule s = AdaOffload(inst);
  Schedule back = DecodeSolution(m, EncodeWarmStart(s, m, inst), inst);
  EXPECT_EQ(Makespan(back, inst), Makespan(s, inst));
  EXPECT_EQ(ModelMakespan(s, m), Makespan(s, inst));
}

TEST(EncodeWarmStart, SequentialOrderingsMatchEventTimes) {
  PipelineInstance inst = MakeUniformInstance(2, 3, 1, 1, 1, 1, 1, 2, 3);
  MilpModel m = BuildModel(inst, Opts(false, false, false));
  Schedule s = SequentialSchedule(inst);
  Assignment a = EncodeWarmStart(s, m, inst);
  ScheduleIndex idx(s, inst);
  for (const auto& v : m.vars) {
    if (v.id.family != VarFamily::P) continue;
    const bool before = idx.Compute(v.id.a).start < idx.Compute(v.id.b).start;
    EXPECT_EQ(a.values[&v - m.vars.data()], before ? 1.0 : 0.0) << VarName(v.id);
  }
}

TEST(EncodeWarmStart, InvalidScheduleRejected) {
  PipelineInstance inst = MakeUniformInstance(1, 2, 1, 1, 1, 0, 1, 2, 3);
  MilpModel m = BuildModel(inst, ModelOptions::For(inst));
  Schedule s = SequentialSchedule(inst);
  s.compute[1].start -= 1;
  s.compute[1].end -= 1;
  EXPECT_THROW(EncodeWarmStart(s, m, inst), InfeasibleWarmStart);
}

}  // namespace
}  // namespace pipesched
