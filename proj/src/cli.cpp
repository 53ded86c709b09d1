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

#include "pipesched/cli.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "pipesched/cache.hpp"
#include "pipesched/errors.hpp"
#include "pipesched/milp.hpp"
#include "pipesched/online.hpp"

namespace pipesched {

namespace {

std::string ReadFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("cannot read " + path);
  return ss.str();
}

void WriteFile(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  out.flush();
  if (!out) throw IoError("cannot write " + path);
}

MemorySemantics SemanticsFrom(const std::string& s) {
  return s == "milp" ? MemorySemantics::kMilpRelaxed : MemorySemantics::kStrict;
}

std::vector<Bytes> Peaks(const Schedule& s, const PipelineInstance& inst) {
  return ComputeMemoryTrace(s, inst, MemorySemantics::kStrict).peak;
}

std::string CacheFromEnv() {
  const char* v = std::getenv("PIPESCHED_CACHE");
  return v ? std::string(v) : std::string();
}

// Adds a duration option that stores into `target`.
CLI::Option* AddDuration(CLI::App* app, const std::string& name, std::chrono::milliseconds& target,
                         const std::string& help) {
  return app->add_option_function<std::string>(
                name,
                [&target](const std::string& v) {
                  auto d = ParseDuration(v);
                  if (!d) throw CLI::ValidationError("bad duration '" + v + "'");
                  target = *d;
                },
                help)
      ->type_name("D");
}

}  // namespace

std::optional<std::chrono::milliseconds> ParseDuration(const std::string& text) {
  std::string num = text;
  double scale = 1000.0;
  auto ends = [&](const std::string& suf) {
    return num.size() > suf.size() && num.compare(num.size() - suf.size(), suf.size(), suf) == 0;
  };
  if (ends("ms")) {
    num.resize(num.size() - 2);
    scale = 1.0;
  } else if (ends("s")) {
    num.resize(num.size() - 1);
  } else if (ends("m")) {
    num.resize(num.size() - 1);
    scale = 60000.0;
  }
  try {
    std::size_t used = 0;
    const double v = std::stod(num, &used);
    if (used != num.size() || !(v >= 0) || !std::isfinite(v)) return std::nullopt;
    return std::chrono::milliseconds(static_cast<long long>(std::llround(v * scale)));
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

CompareReport Compare(const PipelineInstance& inst, const SolveBudget& exact_budget) {
  CompareReport r;
  std::optional<Schedule> warm;
  Time warm_span = kInfiniteTime;
  for (const std::string name : {"sequential", "1f1b", "pipeoffload", "ada"}) {
    StrategyResult res;
    res.name = name;
    try {
      NamedSchedule s = RunHeuristic(name, inst);
      res.makespan = s.makespan;
      res.peak = Peaks(s.schedule, inst);
      res.bubble_ratio = BubbleRatio(s.schedule, inst);
      if (s.makespan < warm_span) {
        warm_span = s.makespan;
        warm = s.schedule;
      }
    } catch (const Infeasible&) {
    }
    r.strategies.push_back(res);
  }
  SolveOutcome o = Solve(inst, ModelOptions::For(inst), exact_budget, warm);
  StrategyResult ex;
  ex.name = "exact";
  ex.status = StatusName(o.status);
  if (o.incumbent) {
    ex.makespan = o.incumbent_makespan;
    ex.peak = Peaks(*o.incumbent, inst);
    ex.bubble_ratio = BubbleRatio(*o.incumbent, inst);
  }
  r.strategies.push_back(ex);
  return r;
}

std::string CompareToJson(const CompareReport& r) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& s : r.strategies) {
    nlohmann::json e;
    e["strategy"] = s.name;
    if (s.makespan) {
      e["makespan"] = *s.makespan;
      e["peak_memory"] = s.peak;
      e["bubble_ratio"] = s.bubble_ratio;
    } else {
      e["makespan"] = "Infeasible";
    }
    if (!s.status.empty()) e["status"] = s.status;
    j.push_back(e);
  }
  return j.dump(1);
}

std::string CompareToTable(const CompareReport& r) {
  std::ostringstream os;
  os << std::left << std::setw(12) << "strategy" << std::setw(12) << "makespan" << std::setw(8)
     << "bubble" << "peak per stage\n";
  for (const auto& s : r.strategies) {
    os << std::setw(12) << s.name;
    if (!s.makespan) {
      os << "Infeasible\n";
      continue;
    }
    std::string span = std::to_string(*s.makespan);
    if (!s.status.empty() && s.status != "Optimal") span += "*";
    os << std::setw(12) << span << std::setw(8) << std::fixed << std::setprecision(3) << s.bubble_ratio;
    for (std::size_t i = 0; i < s.peak.size(); ++i) os << (i ? " " : "") << s.peak[i];
    os << "\n";
  }
  return os.str();
}

int RunCli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Pipeline-parallel schedule optimizer"};
  app.name(args.empty() ? "pipesched" : args[0]);
  app.require_subcommand(1);

  std::string inst_path, sched_path, out_path, model_path, sol_path, db_path, warm = "auto";
  std::string semantics = "strict";
  std::chrono::milliseconds time_limit{300000};
  std::uint64_t node_limit = std::numeric_limits<std::uint64_t>::max();
  double gap = 0;
  bool no_cuts = false, no_symmetry = false, post = false, as_json = false;
  double grid = kDefaultGridStep;
  int iterations = 0;

  auto* solve = app.add_subcommand("solve", "Solve an instance; schedule to -o, outcome to stdout");
  solve->add_option("-i,--instance", inst_path)->required();
  solve->add_option("-o,--output", out_path)->required();
  AddDuration(solve, "--time-limit", time_limit, "wall-time limit (e.g. 500ms, 10s)");
  solve->add_option("--node-limit", node_limit);
  solve->add_option("--gap", gap)->check(CLI::NonNegativeNumber);
  solve->add_option("--warm", warm, "auto|ada|pipeoffload|1f1b|sequential|file:PATH");
  solve->add_flag("--no-cuts", no_cuts);
  solve->add_flag("--no-symmetry", no_symmetry);
  solve->add_flag("--post-validation", post);
  solve->add_option("--semantics", semantics)->check(CLI::IsMember({"strict", "milp"}));
  solve->add_option("--db", db_path, "cache for --warm auto (default $PIPESCHED_CACHE)");

  auto* validate = app.add_subcommand("validate", "Validate a schedule; exit 0 iff ok");
  validate->add_option("-i,--instance", inst_path)->required();
  validate->add_option("-s,--schedule", sched_path)->required();
  validate->add_option("--semantics", semantics)->check(CLI::IsMember({"strict", "milp"}));

  auto* compare = app.add_subcommand("compare", "Compare every strategy on an instance");
  compare->add_option("-i,--instance", inst_path)->required();
  compare->add_flag("--json", as_json);
  std::chrono::milliseconds compare_limit{10000};
  AddDuration(compare, "--time-limit", compare_limit, "limit for the exact solver");

  auto* export_lp = app.add_subcommand("export-lp", "Write the MILP model in LP format");
  export_lp->add_option("-i,--instance", inst_path)->required();
  export_lp->add_option("-o,--output", out_path)->required();
  export_lp->add_flag("--no-cuts", no_cuts);
  export_lp->add_flag("--no-symmetry", no_symmetry);
  export_lp->add_flag("--post-validation", post);

  auto* import_sol = app.add_subcommand("import-sol", "Decode a solver solution file");
  import_sol->add_option("-i,--instance", inst_path)->required();
  import_sol->add_option("-m,--model", model_path)->required();
  import_sol->add_option("-s,--solution", sol_path)->required();
  import_sol->add_option("-o,--output", out_path)->required();

  auto* gantt = app.add_subcommand("gantt", "Render a schedule as SVG");
  gantt->add_option("-i,--instance", inst_path)->required();
  gantt->add_option("-s,--schedule", sched_path)->required();
  gantt->add_option("-o,--output", out_path)->required();

  auto* cache = app.add_subcommand("cache", "Manage the schedule cache");
  cache->require_subcommand(1);
  auto* cstore = cache->add_subcommand("store", "Record a schedule for its instance");
  auto* clookup = cache->add_subcommand("lookup", "Find and adapt a cached schedule");
  auto* clist = cache->add_subcommand("list", "Print every entry");
  for (auto* c : {cstore, clookup, clist}) {
    c->add_option("--db", db_path, "cache file (default $PIPESCHED_CACHE)");
    c->add_option("--grid", grid)->check(CLI::PositiveNumber);
  }
  cstore->add_option("-i,--instance", inst_path)->required();
  cstore->add_option("-s,--schedule", sched_path)->required();
  clookup->add_option("-i,--instance", inst_path)->required();
  clookup->add_option("-o,--output", out_path);

  auto* online = app.add_subcommand("online-sim", "Simulate training with schedule swaps");
  online->add_option("-i,--instance", inst_path)->required();
  online->add_option("--iterations", iterations)->required()->check(CLI::PositiveNumber);
  std::chrono::milliseconds online_limit{500};
  AddDuration(online, "--time-limit", online_limit, "solver budget on the virtual clock");
  online->add_option("--db", db_path, "cache for the warm start (default $PIPESCHED_CACHE)");

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  if (argv.empty()) argv.push_back("pipesched");
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (db_path.empty()) db_path = CacheFromEnv();

    if (solve->parsed()) {
      PipelineInstance inst = LoadInstance(inst_path);
      ModelOptions opts = ModelOptions::For(inst);
      opts.triangle_cuts = !no_cuts;
      opts.fix_microbatch_order = !no_symmetry;
      if (post) opts.post_validation = true;
      inst.post_validation = opts.post_validation;
      std::optional<Schedule> warm_schedule;
      if (warm.rfind("file:", 0) == 0) {
        warm_schedule = LoadSchedule(warm.substr(5));
      } else if (warm == "auto") {
        std::optional<Cache> c;
        if (!db_path.empty()) c.emplace(db_path);
        try {
          WarmStart w = WarmStartFromCache(c ? &*c : nullptr, inst);
          warm_schedule = w.schedule;
          err << "warm start: " << w.source << " (makespan " << w.makespan << ")\n";
        } catch (const NoFeasibleSchedule&) {
          err << "warm start: none feasible\n";
        }
        if (c) {
          for (const auto& w : c->warnings()) err << "warning: " << w << "\n";
        }
      } else {
        const auto& names = HeuristicNames();
        if (std::find(names.begin(), names.end(), warm) == names.end()) {
          err << "unknown --warm value '" << warm << "'\n";
          return kExitUsage;
        }
        try {
          warm_schedule = RunHeuristic(warm, inst).schedule;
        } catch (const Infeasible& e) {
          err << "warm start " << warm << " infeasible: " << e.what() << "\n";
        }
      }
      SolveBudget budget;
      budget.wall_time_limit = time_limit;
      budget.node_limit = node_limit;
      budget.target_gap = gap;
      SolveOutcome o = Solve(inst, opts, budget, warm_schedule, SemanticsFrom(semantics));
      if (o.warm_rejected) err << "warm start rejected: does not validate\n";
      out << OutcomeToJson(o) << "\n";
      if (!o.incumbent) return kExitInfeasible;
      SaveSchedule(*o.incumbent, out_path);
      return kExitOk;
    }

    if (validate->parsed()) {
      PipelineInstance inst = LoadInstance(inst_path);
      Schedule s = LoadSchedule(sched_path);
      ValidationReport rep = Validate(s, inst, SemanticsFrom(semantics));
      nlohmann::json j;
      j["ok"] = rep.ok;
      j["semantics"] = semantics;
      j["violations"] = nlohmann::json::array();
      for (const auto& v : rep.violations) {
        nlohmann::json ops = nlohmann::json::array();
        for (const auto& op : v.ops) ops.push_back(ToString(op));
        j["violations"].push_back({{"id", v.id},
                                   {"ops", ops},
                                   {"measured", v.measured},
                                   {"required", v.required},
                                   {"detail", v.detail}});
      }
      if (rep.ok) j["makespan"] = Makespan(s, inst);
      out << j.dump(1) << "\n";
      if (!rep.ok) err << rep.Summary() << "\n";
      return rep.ok ? kExitOk : kExitInfeasible;
    }

    if (compare->parsed()) {
      PipelineInstance inst = LoadInstance(inst_path);
      SolveBudget budget;
      budget.wall_time_limit = compare_limit;
      CompareReport r = Compare(inst, budget);
      out << (as_json ? CompareToJson(r) + "\n" : CompareToTable(r));
      return kExitOk;
    }

    if (export_lp->parsed()) {
      PipelineInstance inst = LoadInstance(inst_path);
      ModelOptions opts = ModelOptions::For(inst);
      opts.triangle_cuts = !no_cuts;
      opts.fix_microbatch_order = !no_symmetry;
      if (post) opts.post_validation = true;
      MilpModel model = BuildModel(inst, opts);
      WriteFile(out_path, ExportLp(model));
      err << model.vars.size() << " variables (" << model.NumBinary() << " binary), "
          << model.constraints.size() << " rows\n";
      return kExitOk;
    }

    if (import_sol->parsed()) {
      PipelineInstance inst = LoadInstance(inst_path);
      const std::string lp = ReadFile(model_path);
      auto opts = LpOptions(lp);
      if (!opts) {
        err << model_path << ": no options header; was it written by export-lp?\n";
        return kExitUsage;
      }
      MilpModel model = BuildModel(inst, *opts);
      if (ExportLp(model) != lp) {
        err << model_path << ": model does not match the instance\n";
        return kExitUsage;
      }
      Assignment a = ParseSolution(model, ReadFile(sol_path));
      PipelineInstance check = inst;
      check.post_validation = opts->post_validation;
      Schedule s = DecodeSolution(model, a, check);
      SaveSchedule(s, out_path);
      ValidationReport rep = Validate(s, check, MemorySemantics::kMilpRelaxed);
      if (!rep.ok) {
        err << "decoded schedule does not validate:\n" << rep.Summary() << "\n";
        return kExitInfeasible;
      }
      out << nlohmann::json{{"makespan", Makespan(s, check)}}.dump() << "\n";
      return kExitOk;
    }

    if (gantt->parsed()) {
      PipelineInstance inst = LoadInstance(inst_path);
      Schedule s = LoadSchedule(sched_path);
      WriteFile(out_path, GanttSvg(s, inst));
      return kExitOk;
    }

    if (cache->parsed()) {
      if (db_path.empty()) {
        err << "no cache file: pass --db or set PIPESCHED_CACHE\n";
        return kExitUsage;
      }
      Cache db(db_path);
      int code = kExitOk;
      if (cstore->parsed()) {
        PipelineInstance inst = LoadInstance(inst_path);
        Schedule s = LoadSchedule(sched_path);
        ValidationReport rep = Validate(s, inst, MemorySemantics::kStrict);
        if (!rep.ok) {
          err << "refusing to cache an invalid schedule:\n" << rep.Summary() << "\n";
          return kExitInfeasible;
        }
        db.Store(MakeEntry(inst, s, grid));
      } else if (clookup->parsed()) {
        PipelineInstance inst = LoadInstance(inst_path);
        auto entry = db.Lookup(Discretize(inst, grid));
        if (!entry) {
          err << "no cached entry within one grid step\n";
          code = kExitInfeasible;
        } else {
          auto s = Adapt(*entry, inst);
          nlohmann::json j = nlohmann::json::parse(EntryToJson(*entry));
          j["adapted"] = s.has_value();
          if (s) j["adapted_makespan"] = Makespan(*s, inst);
          out << j.dump() << "\n";
          if (!s) {
            err << "cached order does not adapt to this instance\n";
            code = kExitInfeasible;
          } else if (!out_path.empty()) {
            SaveSchedule(*s, out_path);
          }
        }
      } else {
        for (const auto& e : db.List()) out << EntryToJson(e) << "\n";
      }
      for (const auto& w : db.warnings()) err << "warning: " << w << "\n";
      return code;
    }

    if (online->parsed()) {
      PipelineInstance inst = LoadInstance(inst_path);
      std::optional<Cache> c;
      if (!db_path.empty()) c.emplace(db_path);
      SolveBudget budget;
      budget.wall_time_limit = online_limit;
      OnlineReport r = OnlineSim(inst, iterations, budget, {}, c ? &*c : nullptr);
      out << OnlineReportToJson(r) << "\n";
      return kExitOk;
    }
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const StorageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const InvariantViolation& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const UnknownVariable& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NonIntegralBinary& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const PreconditionViolation& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ShapeMismatch& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DegenerateInstance& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitInfeasible;
  }
  return kExitUsage;
}

}  // namespace pipesched
