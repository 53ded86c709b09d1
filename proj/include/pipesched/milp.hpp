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

#ifndef PIPESCHED_MILP_HPP_
#define PIPESCHED_MILP_HPP_

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pipesched/instance.hpp"
#include "pipesched/schedule.hpp"

namespace pipesched {

// P, K, L: compute / offload / reload ordering between two ops.
// M, N: offload / reload of `a` started before compute op `b` ends.
// H: offload of `a` started before reload of `b`.
// Wv: offload decision. E: compute end. O, R: transfer starts.
// C: makespan. S: schedule start (global, or per stage when stage > 0).
enum class VarFamily : std::uint8_t { P, K, L, M, N, H, Wv, E, O, R, C, S };

const char* FamilyName(VarFamily f);
bool IsBinaryFamily(VarFamily f);

struct VarId {
  VarFamily family = VarFamily::C;
  OpId a{0, 0, OpKind::F};
  OpId b{0, 0, OpKind::F};
  int stage = 0;

  static VarId Pair(VarFamily f, const OpId& a, const OpId& b) { return {f, a, b, 0}; }
  static VarId Single(VarFamily f, const OpId& a) { return {f, a, {0, 0, OpKind::F}, 0}; }
  static VarId Makespan() { return {}; }
  static VarId Start(int stage) { return {VarFamily::S, {0, 0, OpKind::F}, {0, 0, OpKind::F}, stage}; }

  friend auto operator<=>(const VarId&, const VarId&) = default;
  friend bool operator==(const VarId&, const VarId&) = default;
};

// LP column name, e.g. B_P_1_2_1__1_3_2 or F_E_2_1_3. Kinds are numbered
// F=1, B=2, W=3.
std::string VarName(const VarId& v);
std::optional<VarId> ParseVarName(const std::string& name);

struct ModelOptions {
  bool fix_microbatch_order = true;
  bool eliminate_transitive = true;
  bool triangle_cuts = false;
  bool post_validation = false;
  bool topology_enabled = true;
  int triangle_cut_budget = 200000;

  // Options matching an instance's own makespan flag.
  static ModelOptions For(const PipelineInstance& inst);
};

struct VarInfo {
  VarId id;
  bool binary = false;
  double lb = 0;
};

enum class Sense { kLe, kGe, kEq };

struct Term {
  int var;
  std::int64_t coef;
};

struct LinConstraint {
  std::vector<Term> terms;
  Sense sense = Sense::kLe;
  std::int64_t rhs = 0;
  std::string tag;
  std::string name;
};

// A 0/1 quantity in the model: either a constant or a (possibly
// complemented) binary column.
struct Lit {
  int var = -1;
  bool negated = false;
  int constant = 0;
  bool IsConstant() const { return var < 0; }
};

class MilpModel {
 public:
  std::vector<VarInfo> vars;
  std::vector<LinConstraint> constraints;
  int objective = -1;
  std::int64_t big_m = 0;
  std::int64_t big_m_mem = 0;
  ModelOptions options;
  PipelineInstance inst;

  int AddVar(const VarId& id, bool binary, double lb);
  std::optional<int> Find(const VarId& id) const;
  int Require(const VarId& id) const;  // throws UnknownVariable

  // P_{a->b}, K_{a->b}, L_{a->b} after fixings and symmetry substitution.
  Lit Order(VarFamily f, const OpId& a, const OpId& b) const;
  // Pair orderings fixed to a constant at build time (compute ops only).
  std::optional<bool> FixedOrder(const OpId& a, const OpId& b) const;
  // Stages sharing a transfer channel with `stage` (itself included).
  const std::vector<int>& Channel(int stage) const { return channel_[stage - 1]; }

  void AddRow(LinConstraint row);

  std::map<std::string, int> CountByTag() const;
  int NumBinary() const;

 private:
  friend MilpModel BuildModel(const PipelineInstance&, const ModelOptions&);
  std::map<VarId, int> index_;
  std::map<std::pair<OpId, OpId>, bool> fixed_;
  std::vector<std::vector<int>> channel_;
  int row_counter_ = 0;
};

MilpModel BuildModel(const PipelineInstance& inst, const ModelOptions& opts);

// Adds at most `budget` TRICUT rows; returns the number added.
int GenTriangleCuts(MilpModel& model, int budget);

std::string ExportLp(const MilpModel& model);
// Options recorded in an exported LP file's header, if present.
std::optional<ModelOptions> LpOptions(const std::string& lp_text);

// Values aligned with model.vars.
struct Assignment {
  std::vector<double> values;
  double Get(const MilpModel& model, const VarId& id) const;
  friend bool operator==(const Assignment&, const Assignment&) = default;
};

// Throws UnknownVariable, NonIntegralBinary or ParseError.
Assignment ParseSolution(const MilpModel& model, const std::string& text);
std::string WriteSolution(const MilpModel& model, const Assignment& a);

struct Residual {
  std::string tag;
  std::string row;
  double amount = 0;
};

// Rows (and lower bounds, tag BOUND) violated by more than tol.
std::vector<Residual> CheckResiduals(const MilpModel& model, const Assignment& a,
                                     double tol = 1e-6);

// Throws ConstraintResidual on the first violated row.
Schedule DecodeSolution(const MilpModel& model, const Assignment& a,
                        const PipelineInstance& inst);

// Throws InfeasibleWarmStart naming the first violated row.
Assignment EncodeWarmStart(const Schedule& s, const MilpModel& model,
                           const PipelineInstance& inst);
// Same encoding without the feasibility check.
Assignment EncodeSchedule(const Schedule& s, const MilpModel& model,
                          const PipelineInstance& inst);

// Value the model's objective takes on a schedule.
Time ModelMakespan(const Schedule& s, const MilpModel& model);

}  // namespace pipesched

#endif  // PIPESCHED_MILP_HPP_
