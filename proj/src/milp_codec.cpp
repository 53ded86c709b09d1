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
#include <cmath>
#include <limits>

#include "pipesched/errors.hpp"
#include "pipesched/milp.hpp"

namespace pipesched {

std::vector<Residual> CheckResiduals(const MilpModel& model, const Assignment& a,
                                     double tol) {
  std::vector<Residual> out;
  if (a.values.size() != model.vars.size()) {
    throw InvariantViolation("assignment does not match the model's variables");
  }
  for (std::size_t k = 0; k < model.vars.size(); ++k) {
    const auto& v = model.vars[k];
    const double x = a.values[k];
    if (x < v.lb - tol) out.push_back({"BOUND", VarName(v.id), v.lb - x});
    if (v.binary && x > 1 + tol) out.push_back({"BOUND", VarName(v.id), x - 1});
  }
  for (const auto& row : model.constraints) {
    double lhs = 0;
    for (const auto& t : row.terms) lhs += static_cast<double>(t.coef) * a.values[t.var];
    const double rhs = static_cast<double>(row.rhs);
    double viol = 0;
    switch (row.sense) {
      case Sense::kLe: viol = lhs - rhs; break;
      case Sense::kGe: viol = rhs - lhs; break;
      case Sense::kEq: viol = std::abs(lhs - rhs); break;
    }
    if (viol > tol) out.push_back({row.tag, row.name, viol});
  }
  return out;
}

Schedule DecodeSolution(const MilpModel& model, const Assignment& a,
                        const PipelineInstance& inst) {
  auto res = CheckResiduals(model, a);
  if (!res.empty()) {
    throw ConstraintResidual(res.front().tag + ": row " + res.front().row +
                             " violated by " + std::to_string(res.front().amount));
  }
  Schedule s;
  for (const auto& op : inst.AllOps()) {
    const Time end = std::llround(a.Get(model, VarId::Single(VarFamily::E, op)));
    s.compute.push_back({op, end - inst.T(op), end});
  }
  for (const auto& op : inst.OffloadableOps()) {
    if (a.Get(model, VarId::Single(VarFamily::Wv, op)) < 0.5) continue;
    s.offloaded.push_back(op);
    const Time o = std::llround(a.Get(model, VarId::Single(VarFamily::O, op)));
    const Time r = std::llround(a.Get(model, VarId::Single(VarFamily::R, op)));
    s.transfers.push_back({op, TransferKind::kOffload, o, o + inst.offload_time});
    s.transfers.push_back({op, TransferKind::kReload, r, r + inst.offload_time});
  }
  s.Normalize();
  return s;
}

Time ModelMakespan(const Schedule& s, const MilpModel& model) {
  const PipelineInstance& inst = model.inst;
  ScheduleIndex idx(s, inst);
  const int P = inst.num_stages;
  const int m = inst.num_microbatches;
  const bool literal = model.options.fix_microbatch_order || m == 1;
  auto start_of = [&](int stage) {
    if (literal) return idx.Compute({stage, 1, OpKind::F}).start;
    Time lo = std::numeric_limits<Time>::max();
    for (int j = 1; j <= m; ++j) lo = std::min(lo, idx.Compute({stage, j, OpKind::F}).start);
    return lo;
  };
  Time c = 0;
  const Time global = start_of(1);
  for (int i = 1; i <= P; ++i) {
    const Time base = model.options.post_validation ? start_of(i) : global;
    for (int j = 1; j <= m; ++j) {
      if (model.options.post_validation && literal && j != m) continue;
      c = std::max(c, idx.Compute({i, j, OpKind::W}).end - base);
    }
  }
  return c;
}

Assignment EncodeSchedule(const Schedule& s, const MilpModel& model,
                          const PipelineInstance& inst) {
  ScheduleIndex idx(s, inst);
  Assignment out;
  out.values.assign(model.vars.size(), 0.0);
  auto off = [&](const OpId& op) { return s.IsOffloaded(op); };
  auto E = [&](const OpId& op) { return idx.Compute(op).end; };
  auto O = [&](const OpId& op) { return off(op) ? idx.Offload(op)->start : E(op); };
  auto R = [&](const OpId& op) { return off(op) ? idx.Reload(op)->start : E(op); };
  // Ordering of two transfer starts. A transfer that does not exist sorts
  // after one that does, which keeps reload-start memory rows exact.
  auto transfer_before = [&](const OpId& a, const OpId& b, auto start) {
    if (off(a) && off(b)) {
      const Time ta = start(a), tb = start(b);
      return ta != tb ? ta < tb : a < b;
    }
    if (off(a) != off(b)) return off(a);
    return a < b;
  };

  const bool literal = model.options.fix_microbatch_order || inst.num_microbatches == 1;
  for (std::size_t k = 0; k < model.vars.size(); ++k) {
    const VarId& id = model.vars[k].id;
    const OpId& a = id.a;
    const OpId& b = id.b;
    double v = 0;
    switch (id.family) {
      case VarFamily::P: {
        const Time ea = E(a), eb = E(b);
        v = ea != eb ? ea < eb : a < b;
        break;
      }
      case VarFamily::K: v = transfer_before(a, b, O); break;
      case VarFamily::L: v = transfer_before(a, b, R); break;
      case VarFamily::H: v = off(a) && off(b) && O(a) < R(b); break;
      case VarFamily::M: v = off(a) && O(a) <= E(b); break;
      case VarFamily::N:
        v = off(a) && (R(a) < E(b) || (R(a) == E(b) && inst.Delta(b) > 0));
        break;
      case VarFamily::Wv: v = off(a); break;
      case VarFamily::E: v = static_cast<double>(E(a)); break;
      case VarFamily::O: v = static_cast<double>(O(a)); break;
      case VarFamily::R: v = static_cast<double>(R(a)); break;
      case VarFamily::C: v = static_cast<double>(ModelMakespan(s, model)); break;
      case VarFamily::S: {
        const int stage = id.stage == 0 ? 1 : id.stage;
        Time lo = std::numeric_limits<Time>::max();
        const int last = literal ? 1 : inst.num_microbatches;
        for (int j = 1; j <= last; ++j) lo = std::min(lo, idx.Compute({stage, j, OpKind::F}).start);
        v = static_cast<double>(lo);
        break;
      }
    }
    out.values[k] = v;
  }
  return out;
}

Assignment EncodeWarmStart(const Schedule& s, const MilpModel& model,
                           const PipelineInstance& inst) {
  Assignment a = EncodeSchedule(s, model, inst);
  auto res = CheckResiduals(model, a);
  if (!res.empty()) {
    throw InfeasibleWarmStart(res.front().tag + ": row " + res.front().row +
                              " violated by " + std::to_string(res.front().amount));
  }
  return a;
}

}  // namespace pipesched
