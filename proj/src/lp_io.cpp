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

#include <charconv>
#include <cmath>
#include <sstream>

#include "pipesched/errors.hpp"
#include "pipesched/milp.hpp"

namespace pipesched {

namespace {

void AppendOp(std::string& out, const OpId& op) {
  out += '_';
  out += std::to_string(op.stage);
  out += '_';
  out += std::to_string(op.microbatch);
  out += '_';
  out += std::to_string(static_cast<int>(op.kind) + 1);
}

std::vector<std::string> Split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  for (char ch : s) {
    if (ch == sep) {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  parts.push_back(cur);
  return parts;
}

std::optional<int> ToInt(const std::string& s) {
  if (s.empty() || (s.size() > 1 && s[0] == '0')) return std::nullopt;
  int v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
  return v;
}

std::optional<OpId> ToOp(const std::vector<std::string>& parts, std::size_t at) {
  if (at + 3 > parts.size()) return std::nullopt;
  auto i = ToInt(parts[at]);
  auto j = ToInt(parts[at + 1]);
  auto c = ToInt(parts[at + 2]);
  if (!i || !j || !c || *i < 1 || *j < 1 || *c < 1 || *c > 3) return std::nullopt;
  return OpId{*i, *j, static_cast<OpKind>(*c - 1)};
}

}  // namespace

std::string VarName(const VarId& v) {
  std::string out = IsBinaryFamily(v.family) ? "B_" : "F_";
  out += FamilyName(v.family);
  switch (v.family) {
    case VarFamily::C:
      break;
    case VarFamily::S:
      if (v.stage > 0) out += "_" + std::to_string(v.stage);
      break;
    case VarFamily::Wv:
    case VarFamily::E:
    case VarFamily::O:
    case VarFamily::R:
      AppendOp(out, v.a);
      break;
    default:
      AppendOp(out, v.a);
      out += '_';
      AppendOp(out, v.b);
      break;
  }
  return out;
}

std::optional<VarId> ParseVarName(const std::string& name) {
  // Pair names carry a double underscore, which splits into an empty part.
  std::vector<std::string> parts = Split(name, '_');
  if (parts.size() < 2) return std::nullopt;
  static const VarFamily kFamilies[] = {VarFamily::P,  VarFamily::K, VarFamily::L,
                                        VarFamily::M,  VarFamily::N, VarFamily::H,
                                        VarFamily::Wv, VarFamily::E, VarFamily::O,
                                        VarFamily::R,  VarFamily::C, VarFamily::S};
  std::optional<VarFamily> fam;
  for (VarFamily f : kFamilies) {
    if (parts[1] == FamilyName(f)) fam = f;
  }
  if (!fam) return std::nullopt;
  if (parts[0] != (IsBinaryFamily(*fam) ? "B" : "F")) return std::nullopt;
  VarId id;
  id.family = *fam;
  switch (*fam) {
    case VarFamily::C:
      if (parts.size() != 2) return std::nullopt;
      return id;
    case VarFamily::S: {
      if (parts.size() == 2) return VarId::Start(0);
      if (parts.size() != 3) return std::nullopt;
      auto st = ToInt(parts[2]);
      if (!st || *st < 1) return std::nullopt;
      return VarId::Start(*st);
    }
    case VarFamily::Wv:
    case VarFamily::E:
    case VarFamily::O:
    case VarFamily::R: {
      if (parts.size() != 5) return std::nullopt;
      auto op = ToOp(parts, 2);
      if (!op) return std::nullopt;
      return VarId::Single(*fam, *op);
    }
    default: {
      if (parts.size() != 9 || !parts[5].empty()) return std::nullopt;
      auto a = ToOp(parts, 2);
      auto b = ToOp(parts, 6);
      if (!a || !b) return std::nullopt;
      return VarId::Pair(*fam, *a, *b);
    }
  }
}

namespace {

void WriteTerms(std::ostringstream& os, const MilpModel& model,
                const std::vector<Term>& terms) {
  int on_line = 0;
  bool first = true;
  for (const auto& t : terms) {
    if (on_line == 6) {
      os << "\n   ";
      on_line = 0;
    }
    const std::int64_t k = t.coef;
    if (first) {
      if (k < 0) os << " -";
    } else {
      os << (k < 0 ? " -" : " +");
    }
    const std::int64_t a = k < 0 ? -k : k;
    os << ' ';
    if (a != 1) os << a << ' ';
    os << VarName(model.vars[t.var].id);
    first = false;
    ++on_line;
  }
}

}  // namespace

std::string ExportLp(const MilpModel& model) {
  std::ostringstream os;
  os << "\\ pipeline schedule model: " << model.inst.num_stages << " stages, "
     << model.inst.num_microbatches << " micro-batches\n";
  const ModelOptions& o = model.options;
  os << "\\ options: fix_microbatch_order=" << o.fix_microbatch_order
     << " eliminate_transitive=" << o.eliminate_transitive << " triangle_cuts=" << o.triangle_cuts
     << " post_validation=" << o.post_validation << " topology_enabled=" << o.topology_enabled
     << " triangle_cut_budget=" << o.triangle_cut_budget << "\n";
  os << "Minimize\n obj: " << VarName(model.vars[model.objective].id) << "\n";
  os << "Subject To\n";
  for (const auto& row : model.constraints) {
    os << ' ' << row.name << ':';
    WriteTerms(os, model, row.terms);
    switch (row.sense) {
      case Sense::kLe: os << " <= "; break;
      case Sense::kGe: os << " >= "; break;
      case Sense::kEq: os << " = "; break;
    }
    os << row.rhs << "\n";
  }
  os << "Bounds\n";
  for (const auto& v : model.vars) {
    if (v.binary) continue;
    os << ' ' << VarName(v.id) << " >= " << static_cast<std::int64_t>(v.lb) << "\n";
  }
  os << "Binary\n";
  for (const auto& v : model.vars) {
    if (v.binary) os << ' ' << VarName(v.id) << "\n";
  }
  os << "End\n";
  return os.str();
}

std::optional<ModelOptions> LpOptions(const std::string& lp_text) {
  std::istringstream in(lp_text);
  std::string line;
  while (std::getline(in, line)) {
    const std::string tag = "\\ options:";
    if (line.rfind(tag, 0) != 0) continue;
    ModelOptions o;
    std::istringstream fields(line.substr(tag.size()));
    std::string kv;
    while (fields >> kv) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) return std::nullopt;
      const std::string k = kv.substr(0, eq);
      auto v = ToInt(kv.substr(eq + 1));
      if (!v) return std::nullopt;
      if (k == "fix_microbatch_order") o.fix_microbatch_order = *v != 0;
      else if (k == "eliminate_transitive") o.eliminate_transitive = *v != 0;
      else if (k == "triangle_cuts") o.triangle_cuts = *v != 0;
      else if (k == "post_validation") o.post_validation = *v != 0;
      else if (k == "topology_enabled") o.topology_enabled = *v != 0;
      else if (k == "triangle_cut_budget") o.triangle_cut_budget = *v;
      else return std::nullopt;
    }
    return o;
  }
  return std::nullopt;
}

double Assignment::Get(const MilpModel& model, const VarId& id) const {
  return values[model.Require(id)];
}

Assignment ParseSolution(const MilpModel& model, const std::string& text) {
  Assignment a;
  a.values.assign(model.vars.size(), 0.0);
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    std::string name, value, extra;
    if (!(ls >> name)) continue;
    if (!(ls >> value) || (ls >> extra)) {
      throw ParseError("line " + std::to_string(lineno) + ": expected 'name value'");
    }
    double v = 0;
    try {
      std::size_t used = 0;
      v = std::stod(value, &used);
      if (used != value.size()) throw std::invalid_argument(value);
    } catch (const std::exception&) {
      throw ParseError("line " + std::to_string(lineno) + ": bad value '" + value + "'");
    }
    auto id = ParseVarName(name);
    std::optional<int> idx = id ? model.Find(*id) : std::nullopt;
    if (!idx) {
      throw UnknownVariable("line " + std::to_string(lineno) + ": unknown variable " + name);
    }
    if (model.vars[*idx].binary) {
      const double r = std::round(v);
      if (std::abs(v - r) > 1e-6 || (r != 0.0 && r != 1.0)) {
        throw NonIntegralBinary("line " + std::to_string(lineno) + ": " + name + " = " + value);
      }
      v = r;
    }
    a.values[*idx] = v;
  }
  return a;
}

std::string WriteSolution(const MilpModel& model, const Assignment& a) {
  std::ostringstream os;
  os.precision(17);
  os << "# Objective value = " << a.values[model.objective] << "\n";
  for (std::size_t k = 0; k < model.vars.size(); ++k) {
    os << VarName(model.vars[k].id) << ' ' << a.values[k] << "\n";
  }
  return os.str();
}

}  // namespace pipesched
