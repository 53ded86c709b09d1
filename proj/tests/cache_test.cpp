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

#include <fstream>
#include <thread>

#include "pipesched/cache.hpp"
#include "pipesched/errors.hpp"
#include "pipesched/milp.hpp"
#include "pipesched/solver.hpp"
#include "testing.hpp"

namespace pipesched {
namespace {

std::filesystem::path FreshDb(const std::string& name) {
  auto p = testing::TempPath(name);
  std::filesystem::remove(p);
  return p;
}

CacheEntry OptimalEntry(const PipelineInstance& inst) {
  SolveOutcome o = Solve(inst, ModelOptions::For(inst), {});
  EXPECT_EQ(o.status, SolveStatus::kOptimal);
  return MakeEntry(inst, *o.incumbent);
}

TEST(Discretize, UniformRatios) {
  PipelineInstance inst = MakeUniformInstance(2, 3, 4, 4, 4, 1, 2, 2, 3);
  CacheKey k = Discretize(inst, 0.25);
  EXPECT_EQ(k.Ratios(), (std::vector<double>{1.0, 1.0, 0.25, 0.5, 3.0}));
  EXPECT_EQ(k.num_stages, 2);
  EXPECT_EQ(k.num_microbatches, 3);
}

TEST(Discretize, ScaleFree) {
  PipelineInstance inst = RandomInstance(4, 3, 2, {1, 5}, MemProfile::kMixed);
  EXPECT_EQ(Discretize(inst), Discretize(testing::ScaleTimes(inst, 2)));
}

TEST(Discretize, RoundsToGrid) {
  PipelineInstance inst = MakeUniformInstance(1, 1, 10, 11, 10, 0, 10, 2, 3);
  EXPECT_DOUBLE_EQ(Discretize(inst, 0.25).Ratios()[0], 1.0);
  PipelineInstance up = MakeUniformInstance(1, 1, 10, 13, 10, 0, 10, 2, 3);
  EXPECT_DOUBLE_EQ(Discretize(up, 0.25).Ratios()[0], 1.25);
}

TEST(Discretize, BadGrid) {
  EXPECT_THROW(Discretize(MakeUniformInstance(1, 1, 1, 1, 1, 0, 1, 2, 3), 0), PreconditionViolation);
}

TEST(Discretize, ZeroForwardTime) {
  PipelineInstance inst = MakeUniformInstance(1, 1, 1, 1, 1, 0, 1, 2, 3);
  inst.proc_time[0][0][0] = 0;
  EXPECT_THROW(Discretize(inst), DegenerateInstance);
}

TEST(CacheEntry, JsonRoundTrip) {
  PipelineInstance inst = MakeUniformInstance(2, 2, 1, 1, 1, 1, 1, 2, 2);
  CacheEntry e = OptimalEntry(inst);
  CacheEntry back = EntryFromJson(EntryToJson(e));
  EXPECT_EQ(back.key, e.key);
  EXPECT_EQ(back.order, e.order);
  EXPECT_EQ(back.offloaded, e.offloaded);
  EXPECT_EQ(back.sequence, e.sequence);
  EXPECT_EQ(back.makespan_ratio, e.makespan_ratio);
  EXPECT_THROW(EntryFromJson("{\"key\": 1}"), ParseError);
}

TEST(Cache, EmptyLookup) {
  Cache db(FreshDb("empty.db"));
  EXPECT_FALSE(db.Lookup(Discretize(MakeUniformInstance(1, 1, 1, 1, 1, 0, 1, 2, 3))));
  EXPECT_TRUE(db.List().empty());
}

TEST(Cache, StoreThenLookup) {
  Cache db(FreshDb("store.db"));
  PipelineInstance inst = MakeUniformInstance(2, 2, 1, 1, 1, 1, 1, 2, 2);
  CacheEntry e = OptimalEntry(inst);
  db.Store(e);
  auto hit = db.Lookup(e.key);
  ASSERT_TRUE(hit);
  EXPECT_EQ(hit->order, e.order);
  EXPECT_EQ(hit->makespan_ratio, e.makespan_ratio);
}

TEST(Cache, NearestWithinOneStep) {
  Cache db(FreshDb("near.db"));
  PipelineInstance inst = MakeUniformInstance(2, 2, 4, 4, 4, 1, 2, 2, 2);
  CacheEntry e = OptimalEntry(inst);
  db.Store(e);
  CacheKey probe = e.key;
  probe.steps[0] += 1;
  ASSERT_TRUE(db.Lookup(probe));
  EXPECT_EQ(db.Lookup(probe)->key, e.key);
  probe.steps[0] += 1;
  EXPECT_FALSE(db.Lookup(probe));
  CacheKey other_shape = e.key;
  other_shape.num_microbatches = 3;
  EXPECT_FALSE(db.Lookup(other_shape));
}

TEST(Cache, NeighbourTiesPreferSmallerRatio) {
  Cache db(FreshDb("ties.db"));
  PipelineInstance inst = MakeUniformInstance(2, 2, 4, 4, 4, 1, 2, 2, 2);
  CacheEntry a = OptimalEntry(inst);
  CacheEntry b = a;
  a.key.steps[0] -= 1;
  b.key.steps[0] += 1;
  a.makespan_ratio += 1;
  db.Store(a);
  db.Store(b);
  CacheEntry centre = OptimalEntry(inst);
  auto hit = db.Lookup(centre.key);
  ASSERT_TRUE(hit);
  EXPECT_EQ(hit->key, b.key);
}

TEST(Cache, StoreKeepsSmallerRatio) {
  Cache db(FreshDb("idem.db"));
  PipelineInstance inst = MakeUniformInstance(2, 2, 1, 1, 1, 1, 1, 2, 2);
  CacheEntry good = OptimalEntry(inst);
  CacheEntry worse = MakeEntry(inst, SequentialSchedule(inst));
  ASSERT_EQ(good.key, worse.key);
  db.Store(worse);
  db.Store(good);
  db.Store(worse);
  db.Store(good);
  ASSERT_EQ(db.List().size(), 1u);
  EXPECT_EQ(db.List()[0].makespan_ratio, good.makespan_ratio);
}

TEST(Cache, CorruptLinesSkipped) {
  auto p = FreshDb("corrupt.db");
  PipelineInstance inst = MakeUniformInstance(2, 2, 1, 1, 1, 1, 1, 2, 2);
  CacheEntry e = OptimalEntry(inst);
  {
    std::ofstream out(p);
    out << "not json\n" << EntryToJson(e) << "\n{\"key\":";
  }
  Cache db(p);
  EXPECT_TRUE(db.Lookup(e.key));
  EXPECT_EQ(db.warnings().size(), 2u);
  db.Store(MakeEntry(MakeUniformInstance(1, 1, 1, 1, 1, 0, 1, 2, 3),
                     SequentialSchedule(MakeUniformInstance(1, 1, 1, 1, 1, 0, 1, 2, 3))));
  Cache reread(p);
  EXPECT_EQ(reread.List().size(), 2u);
}

TEST(Cache, UnreadablePathIsStorageError) {
  auto dir = testing::TempPath("a_directory.db");
  std::filesystem::create_directories(dir);
  Cache db(dir);
  EXPECT_THROW(db.List(), StorageError);
  PipelineInstance inst = MakeUniformInstance(1, 1, 1, 1, 1, 0, 1, 2, 3);
  EXPECT_THROW(db.Store(MakeEntry(inst, SequentialSchedule(inst))), StorageError);
}

TEST(Cache, ConcurrentWriters) {
  auto p = FreshDb("concurrent.db");
  std::vector<std::thread> writers;
  for (int t = 0; t < 4; ++t) {
    writers.emplace_back([&p, t] {
      Cache db(p);
      for (int k = 0; k < 10; ++k) {
        PipelineInstance inst = MakeUniformInstance(1, 1, 4, 4 + t * 10 + k, 4, 0, 1, 2, 3);
        db.Store(MakeEntry(inst, SequentialSchedule(inst)));
      }
    });
  }
  for (auto& w : writers) w.join();
  Cache db(p);
  EXPECT_EQ(db.List().size(), 40u);
  EXPECT_TRUE(db.warnings().empty());
}

TEST(Adapt, IdentityReplay) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    PipelineInstance inst = RandomInstance(seed, 2, 2, {1, 3}, MemProfile::kMixed);
    SolveOutcome o = Solve(inst, ModelOptions::For(inst), {});
    if (!o.incumbent) continue;
    auto s = Adapt(MakeEntry(inst, *o.incumbent), inst);
    ASSERT_TRUE(s) << "seed " << seed;
    EXPECT_EQ(Makespan(*s, inst), o.incumbent_makespan) << "seed " << seed;
    EXPECT_TRUE(Validate(*s, inst, MemorySemantics::kStrict).ok);
  }
}

TEST(Adapt, TimeScalingIsLinear) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    PipelineInstance inst = RandomInstance(seed, 2, 2, {1, 3}, MemProfile::kMixed);
    SolveOutcome o = Solve(inst, ModelOptions::For(inst), {});
    if (!o.incumbent) continue;
    PipelineInstance twice = testing::ScaleTimes(inst, 2);
    auto s = Adapt(MakeEntry(inst, *o.incumbent), twice);
    ASSERT_TRUE(s);
    EXPECT_EQ(Makespan(*s, twice), 2 * o.incumbent_makespan) << "seed " << seed;
  }
}

TEST(Adapt, TighterLimitFails) {
  PipelineInstance inst = MakeUniformInstance(3, 4, 1, 1, 1, 1, 1, 2, 8);
  Schedule s = OneFOneB(inst);
  const auto peak = testing::ReplayPeaks(s, inst, false);
  const Bytes top = *std::max_element(peak.begin(), peak.end());
  CacheEntry e = MakeEntry(inst, s);
  EXPECT_TRUE(Adapt(e, inst));
  EXPECT_FALSE(Adapt(e, testing::WithLimit(inst, top - 1)));
}

TEST(Adapt, ShapeMismatch) {
  PipelineInstance inst = MakeUniformInstance(2, 2, 1, 1, 1, 1, 1, 2, 2);
  CacheEntry e = MakeEntry(inst, SequentialSchedule(inst));
  EXPECT_THROW(Adapt(e, MakeUniformInstance(2, 3, 1, 1, 1, 1, 1, 2, 2)), ShapeMismatch);
}

TEST(WarmStartFromCache, ColdCache) {
  PipelineInstance inst = MakeUniformInstance(3, 4, 1, 1, 1, 0, 1, 2, 3);
  Cache db(FreshDb("cold.db"));
  WarmStart w = WarmStartFromCache(&db, inst);
  const auto& names = HeuristicNames();
  EXPECT_NE(std::find(names.begin(), names.end(), w.source), names.end());
  EXPECT_EQ(WarmStartFromCache(nullptr, inst).source, w.source);
}

TEST(WarmStartFromCache, SeededWithOptimum) {
  Cache db(FreshDb("warm.db"));
  int cache_wins = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    PipelineInstance inst = RandomInstance(seed, 2, 2, {1, 3}, MemProfile::kMixed);
    SolveOutcome o = Solve(inst, ModelOptions::For(inst), {});
    if (!o.incumbent) continue;
    db.Store(MakeEntry(inst, *o.incumbent));
    WarmStart w = WarmStartFromCache(&db, inst);
    const Time heuristic = BestFeasible(inst).makespan;
    EXPECT_EQ(w.makespan, std::min(heuristic, o.incumbent_makespan));
    if (o.incumbent_makespan < heuristic) {
      EXPECT_EQ(w.source, "cache") << "seed " << seed;
      ++cache_wins;
    }
  }
  EXPECT_GT(cache_wins, 0);
}

TEST(WarmStartFromCache, FailedAdaptationFallsBack) {
  Cache db(FreshDb("fallback.db"));
  PipelineInstance inst = MakeUniformInstance(3, 4, 1, 1, 1, 1, 1, 2, 8);
  Schedule s = OneFOneB(inst);
  const auto peak = testing::ReplayPeaks(s, inst, false);
  PipelineInstance tight = testing::WithLimit(inst, *std::max_element(peak.begin(), peak.end()) - 1);
  CacheEntry e = MakeEntry(inst, s);
  e.key = Discretize(tight);
  db.Store(e);
  ASSERT_TRUE(db.Lookup(Discretize(tight)));
  WarmStart w = WarmStartFromCache(&db, tight);
  EXPECT_NE(w.source, "cache");
  EXPECT_TRUE(Validate(w.schedule, tight, MemorySemantics::kStrict).ok);
}

}  // namespace
}  // namespace pipesched
