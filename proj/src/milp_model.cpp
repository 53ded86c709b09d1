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
#include <cstdlib>

#include "pipesched/errors.hpp"
#include "pipesched/milp.hpp"

namespace pipesched {

const char* FamilyName(VarFamily f) {
  switch (f) {
    case VarFamily::P: return "P";
    case VarFamily::K: return "K";
    case VarFamily::L: return "L";
    case VarFamily::M: return "M";
    case VarFamily::N: return "N";
    case VarFamily::H: return "H";
    case VarFamily::Wv: return "Wv";
    case VarFamily::E: return "E";
    case VarFamily::O: return "O";
    case VarFamily::R: return "R";
    case VarFamily::C: return "C";
    case VarFamily::S: return "S";
  }
  return "?";
}

bool IsBinaryFamily(VarFamily f) {
  switch (f) {
    case VarFamily::P:
    case VarFamily::K:
    case VarFamily::L:
    case VarFamily::M:
    case VarFamily::N:
    case VarFamily::H:
    case VarFamily::Wv:
      return true;
    default:
      return false;
  }
}

ModelOptions ModelOptions::For(const PipelineInstance& inst) {
  ModelOptions o;
  o.post_validation = inst.post_validation;
  return o;
}

int MilpModel::AddVar(const VarId& id, bool binary, double lb) {
  auto [it, inserted] = index_.emplace(id, static_cast<int>(vars.size()));
  if (!inserted) throw InvariantViolation("duplicate variable " + VarName(id));
  vars.push_back({id, binary, lb});
  return it->second;
}

std::optional<int> MilpModel::Find(const VarId& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

int MilpModel::Require(const VarId& id) const {
  auto v = Find(id);
  if (!v) throw UnknownVariable("variable " + VarName(id) + " not in model");
  return *v;
}

std::optional<bool> MilpModel::FixedOrder(const OpId& a, const OpId& b) const {
  auto it = fixed_.find({a, b});
  if (it == fixed_.end()) return std::nullopt;
  return it->second;
}

Lit MilpModel::Order(VarFamily f, const OpId& a, const OpId& b) const {
  if (f == VarFamily::P) {
    if (auto c = FixedOrder(a, b)) return Lit{-1, false, *c ? 1 : 0};
  }
  if (auto v = Find(VarId::Pair(f, a, b))) return Lit{*v, false, 0};
  if (auto v = Find(VarId::Pair(f, b, a))) return Lit{*v, true, 0};
  throw UnknownVariable(std::string("no ordering ") + FamilyName(f) + " between " +
                        ToString(a) + " and " + ToString(b));
}

void MilpModel::AddRow(LinConstraint row) {
  row.name = row.tag + "_n" + std::to_string(++row_counter_);
  constraints.push_back(std::move(row));
}

std::map<std::string, int> MilpModel::CountByTag() const {
  std::map<std::string, int> out;
  for (const auto& r : constraints) ++out[r.tag];
  return out;
}

int MilpModel::NumBinary() const {
  return static_cast<int>(std::count_if(vars.begin(), vars.end(),
                                        [](const VarInfo& v) { return v.binary; }));
}

namespace {

Lit Negate(Lit l) {
  if (l.IsConstant()) return Lit{-1, false, 1 - l.constant};
  l.negated = !l.negated;
  return l;
}

Lit VarLit(int v) { return Lit{v, false, 0}; }

struct Expr {
  std::map<int, std::int64_t> coef;
  std::int64_t constant = 0;

  Expr& Var(int v, std::int64_t k = 1) {
    coef[v] += k;
    return *this;
  }
  Expr& Const(std::int64_t k) {
    constant += k;
    return *this;
  }
  Expr& Add(const Lit& l, std::int64_t k = 1) {
    if (l.IsConstant()) {
      constant += k * l.constant;
    } else if (l.negated) {
      constant += k;
      coef[l.var] -= k;
    } else {
      coef[l.var] += k;
    }
    return *this;
  }
};

class Builder {
 public:
  explicit Builder(MilpModel& m) : m_(m) {}

  // Emits lhs (sense) rhs when every gate literal is 1, relaxing by big_m per
  // gate. A gate fixed to 0 drops the row entirely.
  void Row(Expr lhs, Sense sense, Expr rhs, const std::string& tag,
           std::initializer_list<Lit> gates = {}, std::int64_t big = 0) {
    if (big == 0) big = m_.big_m;
    for (const Lit& g : gates) {
      if (g.IsConstant() && g.constant == 0) return;
    }
    // The row is lhs - rhs (sense) 0; each gate g adds -(1-g)*big on the
    // favourable side.
    Expr e = lhs;
    for (const auto& [v, k] : rhs.coef) e.coef[v] -= k;
    e.constant -= rhs.constant;
    for (const Lit& g : gates) {
      if (g.IsConstant()) continue;
      const std::int64_t s = sense == Sense::kGe ? 1 : -1;
      // (1 - g) * big moved into e with sign s.
      e.Const(s * big);
      e.Add(g, -s * big);
    }
    LinConstraint row;
    row.sense = sense;
    row.tag = tag;
    for (const auto& [v, k] : e.coef) {
      if (k != 0) row.terms.push_back({v, k});
    }
    row.rhs = -e.constant;
    if (row.terms.empty()) {
      const bool ok = sense == Sense::kLe   ? 0 <= row.rhs
                      : sense == Sense::kGe ? 0 >= row.rhs
                                            : row.rhs == 0;
      if (ok) return;
      // Kept so that the model stays infeasible on export.
      row.terms.push_back({m_.objective, 0});
    }
    m_.AddRow(std::move(row));
  }

 private:
  MilpModel& m_;
};

}  // namespace

MilpModel BuildModel(const PipelineInstance& inst, const ModelOptions& opts) {
  ValidateInstance(inst);
  MilpModel model;
  model.inst = inst;
  model.options = opts;
  const int P = inst.num_stages;
  const int m = inst.num_microbatches;
  const Time tc = inst.comm_time;
  const Time toff = inst.offload_time;

  std::int64_t horizon = 0;
  std::int64_t mem = 0;
  for (const auto& op : inst.AllOps()) {
    horizon += inst.T(op);
    mem += std::abs(inst.Delta(op)) + inst.Gamma(op);
    if (inst.Offloadable(op)) horizon += 2 * toff;
  }
  horizon += 2 * static_cast<std::int64_t>(P) * m * tc;
  model.big_m = horizon;
  model.big_m_mem = mem;

  model.channel_.resize(P);
  for (int i = 1; i <= P; ++i) {
    if (opts.topology_enabled) {
      model.channel_[i - 1] = inst.topology_groups[inst.GroupOf(i)];
      std::sort(model.channel_[i - 1].begin(), model.channel_[i - 1].end());
    } else {
      model.channel_[i - 1] = {i};
    }
  }

  std::vector<std::vector<OpId>> stage_ops(P), stage_off(P);
  for (const auto& op : inst.AllOps()) {
    stage_ops[op.stage - 1].push_back(op);
    if (inst.Offloadable(op)) stage_off[op.stage - 1].push_back(op);
  }

  // Continuous columns.
  for (const auto& op : inst.AllOps()) {
    model.AddVar(VarId::Single(VarFamily::E, op), false, static_cast<double>(inst.T(op)));
  }
  for (const auto& op : inst.OffloadableOps()) {
    model.AddVar(VarId::Single(VarFamily::Wv, op), true, 0);
    model.AddVar(VarId::Single(VarFamily::O, op), false, 0);
    model.AddVar(VarId::Single(VarFamily::R, op), false, 0);
  }
  model.objective = model.AddVar(VarId::Makespan(), false, 0);
  const bool literal_span = opts.fix_microbatch_order || m == 1;
  if (!literal_span) {
    if (opts.post_validation) {
      for (int i = 1; i <= P; ++i) model.AddVar(VarId::Start(i), false, 0);
    } else {
      model.AddVar(VarId::Start(0), false, 0);
    }
  }

  Builder b(model);
  auto E = [&](const OpId& op) { return model.Require(VarId::Single(VarFamily::E, op)); };
  auto O = [&](const OpId& op) { return model.Require(VarId::Single(VarFamily::O, op)); };
  auto R = [&](const OpId& op) { return model.Require(VarId::Single(VarFamily::R, op)); };
  auto W = [&](const OpId& op) {
    return VarLit(model.Require(VarId::Single(VarFamily::Wv, op)));
  };

  // Compute orderings: constants from the F->B->W fixing and, optionally, the
  // fixed micro-batch order, closed under transitivity when requested.
  for (int s = 0; s < P; ++s) {
    const auto& ops = stage_ops[s];
    const int n = static_cast<int>(ops.size());
    std::vector<std::vector<char>> before(n, std::vector<char>(n, 0));
    auto at = [&](int j, OpKind c) { return (j - 1) * 3 + static_cast<int>(c); };
    for (int j = 1; j <= m; ++j) {
      before[at(j, OpKind::F)][at(j, OpKind::B)] = 1;
      before[at(j, OpKind::B)][at(j, OpKind::W)] = 1;
      if (opts.fix_microbatch_order) {
        for (int j2 = j + 1; j2 <= m; ++j2) {
          for (OpKind c : kAllKinds) before[at(j, c)][at(j2, c)] = 1;
        }
      }
    }
    if (opts.eliminate_transitive) {
      for (int k = 0; k < n; ++k) {
        for (int x = 0; x < n; ++x) {
          if (!before[x][k]) continue;
          for (int y = 0; y < n; ++y) {
            if (before[k][y]) before[x][y] = 1;
          }
        }
      }
    }
    for (int x = 0; x < n; ++x) {
      for (int y = x + 1; y < n; ++y) {
        const OpId& a = ops[x];
        const OpId& c = ops[y];
        if (before[x][y] || before[y][x]) {
          model.fixed_[{a, c}] = before[x][y] != 0;
          model.fixed_[{c, a}] = before[y][x] != 0;
          continue;
        }
        const int v = model.AddVar(VarId::Pair(VarFamily::P, a, c), true, 0);
        if (!opts.fix_microbatch_order) {
          const int w = model.AddVar(VarId::Pair(VarFamily::P, c, a), true, 0);
          b.Row(Expr().Var(v).Var(w), Sense::kEq, Expr().Const(1), "EQ5");
        }
      }
    }
  }

  // Transfer orderings within a channel.
  std::vector<std::pair<OpId, OpId>> channel_pairs;  // unordered, a < b
  for (int s = 1; s <= P; ++s) {
    for (const auto& a : stage_off[s - 1]) {
      for (int s2 : model.Channel(s)) {
        for (const auto& c : stage_off[s2 - 1]) {
          if (a < c) channel_pairs.emplace_back(a, c);
        }
      }
    }
  }
  std::sort(channel_pairs.begin(), channel_pairs.end());
  for (VarFamily f : {VarFamily::K, VarFamily::L}) {
    for (const auto& [a, c] : channel_pairs) {
      const int v = model.AddVar(VarId::Pair(f, a, c), true, 0);
      if (!opts.fix_microbatch_order) {
        const int w = model.AddVar(VarId::Pair(f, c, a), true, 0);
        b.Row(Expr().Var(v).Var(w), Sense::kEq, Expr().Const(1),
              a.stage == c.stage ? "EQ8_11" : "TOPO");
      }
    }
  }
  for (const auto& [a, c] : channel_pairs) {
    model.AddVar(VarId::Pair(VarFamily::H, a, c), true, 0);
    model.AddVar(VarId::Pair(VarFamily::H, c, a), true, 0);
  }
  for (int s = 0; s < P; ++s) {
    for (const auto& x : stage_off[s]) {
      for (const auto& y : stage_ops[s]) model.AddVar(VarId::Pair(VarFamily::M, x, y), true, 0);
    }
    for (const auto& x : stage_off[s]) {
      for (const auto& y : stage_ops[s]) model.AddVar(VarId::Pair(VarFamily::N, x, y), true, 0);
    }
  }
  auto H = [&](const OpId& a, const OpId& c) {
    return VarLit(model.Require(VarId::Pair(VarFamily::H, a, c)));
  };
  auto M = [&](const OpId& a, const OpId& c) {
    return VarLit(model.Require(VarId::Pair(VarFamily::M, a, c)));
  };
  auto N = [&](const OpId& a, const OpId& c) {
    return VarLit(model.Require(VarId::Pair(VarFamily::N, a, c)));
  };

  // Makespan.
  const int C = model.objective;
  if (literal_span) {
    if (opts.post_validation) {
      for (int i = 1; i <= P; ++i) {
        const OpId first{i, 1, OpKind::F}, last{i, m, OpKind::W};
        b.Row(Expr().Var(C), Sense::kGe,
              Expr().Var(E(last)).Var(E(first), -1).Const(inst.T(first)), "EQ16");
      }
    } else {
      const OpId first{1, 1, OpKind::F};
      for (int i = 1; i <= P; ++i) {
        for (int j = 1; j <= m; ++j) {
          b.Row(Expr().Var(C), Sense::kGe,
                Expr().Var(E({i, j, OpKind::W})).Var(E(first), -1).Const(inst.T(first)),
                "EQ17");
        }
      }
    }
  } else if (opts.post_validation) {
    for (int i = 1; i <= P; ++i) {
      const int S = model.Require(VarId::Start(i));
      for (int j = 1; j <= m; ++j) {
        const OpId f{i, j, OpKind::F};
        b.Row(Expr().Var(S), Sense::kLe, Expr().Var(E(f)).Const(-inst.T(f)), "EQ16");
        b.Row(Expr().Var(C), Sense::kGe, Expr().Var(E({i, j, OpKind::W})).Var(S, -1), "EQ16");
      }
    }
  } else {
    const int S = model.Require(VarId::Start(0));
    for (int j = 1; j <= m; ++j) {
      const OpId f{1, j, OpKind::F};
      b.Row(Expr().Var(S), Sense::kLe, Expr().Var(E(f)).Const(-inst.T(f)), "EQ17");
    }
    for (int i = 1; i <= P; ++i) {
      for (int j = 1; j <= m; ++j) {
        b.Row(Expr().Var(C), Sense::kGe, Expr().Var(E({i, j, OpKind::W})).Var(S, -1), "EQ17");
      }
    }
  }

  // Data dependencies.
  for (int i = 1; i <= P; ++i) {
    for (int j = 1; j <= m; ++j) {
      if (i > 1) {
        const OpId f{i, j, OpKind::F};
        b.Row(Expr().Var(E(f)), Sense::kGe,
              Expr().Var(E({i - 1, j, OpKind::F})).Const(tc + inst.T(f)), "EQ3");
      }
      if (i < P) {
        const OpId bk{i, j, OpKind::B};
        b.Row(Expr().Var(E(bk)), Sense::kGe,
              Expr().Var(E({i + 1, j, OpKind::B})).Const(tc + inst.T(bk)), "EQ4");
      }
    }
  }

  // Compute exclusivity; F->B->W order arrives through the fixed literals.
  for (int s = 0; s < P; ++s) {
    for (const auto& a : stage_ops[s]) {
      for (const auto& c : stage_ops[s]) {
        if (a == c) continue;
        const Lit p = model.Order(VarFamily::P, a, c);
        b.Row(Expr().Var(E(a)), Sense::kGe, Expr().Var(E(c)).Const(inst.T(a)), "EQ5",
              {Negate(p)});
      }
    }
  }

  // Memory at every compute end.
  for (int s = 0; s < P; ++s) {
    for (const auto& y : stage_ops[s]) {
      Expr e;
      e.Const(inst.Delta(y));
      for (const auto& z : stage_ops[s]) {
        if (z != y) e.Add(model.Order(VarFamily::P, z, y), inst.Delta(z));
      }
      for (const auto& x : stage_off[s]) {
        e.Add(M(x, y), -inst.Gamma(x));
        e.Add(N(x, y), inst.Gamma(x));
      }
      b.Row(e, Sense::kLe, Expr().Const(inst.Limit(s + 1)), "EQ7");
    }
    // Memory at every reload start.
    for (const auto& x : stage_off[s]) {
      Expr e;
      for (const auto& z : stage_ops[s]) e.Add(Negate(N(x, z)), inst.Delta(z));
      for (const auto& x2 : stage_off[s]) {
        if (x2 == x) continue;
        e.Add(H(x2, x), -inst.Gamma(x2));
        e.Add(model.Order(VarFamily::L, x2, x), inst.Gamma(x2));
      }
      b.Row(e, Sense::kLe, Expr().Const(inst.Limit(s + 1)), "EQ7", {W(x)}, model.big_m_mem);
    }
  }

  // Transfer sequencing on each channel.
  for (int s = 1; s <= P; ++s) {
    for (const auto& x : stage_off[s - 1]) {
      for (int s2 : model.Channel(s)) {
        for (const auto& y : stage_off[s2 - 1]) {
          if (x == y) continue;
          const std::string tag = s == s2 ? "EQ8_11" : "TOPO";
          const Lit wx = W(x), wy = W(y);
          b.Row(Expr().Var(O(x)), Sense::kGe, Expr().Var(O(y)).Const(toff), tag,
                {Negate(model.Order(VarFamily::K, x, y)), wx, wy});
          b.Row(Expr().Var(R(x)), Sense::kGe, Expr().Var(R(y)).Const(toff), tag,
                {Negate(model.Order(VarFamily::L, x, y)), wx, wy});
          b.Row(Expr().Var(R(x)), Sense::kGe, Expr().Var(O(y)).Const(toff), tag,
                {H(y, x), wx, wy});
          b.Row(Expr().Var(O(x)), Sense::kGe, Expr().Var(R(y)).Const(toff), tag,
                {Negate(H(x, y)), wx, wy});
        }
      }
    }
  }

  // Transfer / compute synchronisation.
  for (int s = 0; s < P; ++s) {
    for (const auto& x : stage_off[s]) {
      const Lit wx = W(x);
      const OpId bx{x.stage, x.microbatch, OpKind::B};
      b.Row(Expr().Var(O(x)), Sense::kGe, Expr().Var(E(x)), "EQ12_14", {wx});
      b.Row(Expr().Var(R(x)).Const(toff), Sense::kLe, Expr().Var(E(bx)).Const(-inst.T(bx)),
            "EQ12_14", {wx});
      b.Row(Expr().Var(O(x)).Const(toff), Sense::kLe, Expr().Var(R(x)), "EQ12_14", {wx});
      for (const auto& y : stage_ops[s]) {
        b.Row(Expr().Var(O(x)), Sense::kLe, Expr().Var(E(y)), "EQ12_14", {M(x, y), wx});
        b.Row(Expr().Var(R(x)), Sense::kLe, Expr().Var(E(y)), "EQ12_14", {N(x, y), wx});
        b.Row(Expr().Var(R(x)), Sense::kGe, Expr().Var(E(y)), "EQ12_14", {Negate(N(x, y)), wx});
      }
    }
  }

  // Offload-choice consistency.
  for (int s = 0; s < P; ++s) {
    for (const auto& x : stage_off[s]) {
      for (const auto& y : stage_ops[s]) {
        b.Row(Expr().Add(M(x, y)), Sense::kLe, Expr().Add(W(x)), "EQ15");
        b.Row(Expr().Add(N(x, y)), Sense::kLe, Expr().Add(W(x)), "EQ15");
      }
    }
  }
  for (const auto& [a, c] : channel_pairs) {
    b.Row(Expr().Add(H(a, c)), Sense::kLe, Expr().Add(W(a)), "EQ15");
    b.Row(Expr().Add(H(c, a)), Sense::kLe, Expr().Add(W(c)), "EQ15");
  }

  if (opts.triangle_cuts) GenTriangleCuts(model, opts.triangle_cut_budget);
  return model;
}

int GenTriangleCuts(MilpModel& model, int budget) {
  const PipelineInstance& inst = model.inst;
  int added = 0;
  for (int s = 1; s <= inst.num_stages && added < budget; ++s) {
    std::vector<OpId> ops;
    for (int j = 1; j <= inst.num_microbatches; ++j) {
      for (OpKind c : kAllKinds) ops.push_back({s, j, c});
    }
    const int n = static_cast<int>(ops.size());
    for (int x = 0; x < n && added < budget; ++x) {
      for (int y = x + 1; y < n && added < budget; ++y) {
        const Lit ab = model.Order(VarFamily::P, ops[x], ops[y]);
        if (ab.IsConstant()) continue;
        for (int z = y + 1; z < n && added < budget; ++z) {
          const Lit bc = model.Order(VarFamily::P, ops[y], ops[z]);
          const Lit ac = model.Order(VarFamily::P, ops[x], ops[z]);
          if (bc.IsConstant() || ac.IsConstant()) continue;
          Builder b(model);
          b.Row(Expr().Add(ab).Add(bc).Add(ac, -1), Sense::kLe, Expr().Const(1), "TRICUT");
          ++added;
          if (added >= budget) break;
          b.Row(Expr().Add(ac).Add(ab, -1).Add(bc, -1), Sense::kLe, Expr().Const(0), "TRICUT");
          ++added;
        }
      }
    }
  }
  return added;
}

}  // namespace pipesched
