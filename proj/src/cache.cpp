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

#include "pipesched/cache.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"
#include "pipesched/errors.hpp"

namespace pipesched {

namespace {

using json = nlohmann::json;

constexpr Time kUnset = std::numeric_limits<Time>::min() / 4;

double MeanOver(const PipelineInstance& inst, OpKind k, bool gamma) {
  double sum = 0;
  for (int i = 1; i <= inst.num_stages; ++i) {
    for (int j = 1; j <= inst.num_microbatches; ++j) {
      const OpId op{i, j, k};
      sum += gamma ? static_cast<double>(inst.Gamma(op)) : static_cast<double>(inst.T(op));
    }
  }
  return sum / (inst.num_stages * inst.num_microbatches);
}

double MeanForward(const PipelineInstance& inst) { return MeanOver(inst, OpKind::F, false); }

// Places a sequence of events one at a time. Each lands at the earliest time
// allowed by its dependencies and resources, but never before the latest
// memory-effect instant already placed on its stage.
class Replayer {
 public:
  explicit Replayer(const PipelineInstance& inst, std::vector<OpId> offloaded)
      : inst_(inst), offloaded_(std::move(offloaded)) {
    const int n = inst.num_ops();
    end_.assign(n, kUnset);
    off_start_.assign(n, kUnset);
    rel_start_.assign(n, kUnset);
    compute_free_.assign(inst.num_stages, 0);
    stage_last_.assign(inst.num_stages, kUnset);
    chan_free_.assign(inst.topology_groups.size(), 0);
  }

  bool IsOffloaded(const OpId& op) const {
    return std::binary_search(offloaded_.begin(), offloaded_.end(), op);
  }

  bool Placed(const SequenceItem& it) const {
    const int e = inst_.Index(it.op);
    switch (it.kind) {
      case SequenceItem::Kind::kCompute: return end_[e] != kUnset;
      case SequenceItem::Kind::kOffload: return off_start_[e] != kUnset;
      case SequenceItem::Kind::kReload: return rel_start_[e] != kUnset;
    }
    return false;
  }

  // Memory-effect instant the item would get, or nullopt if a predecessor is
  // missing.
  std::optional<Time> Point(const SequenceItem& it) const {
    const OpId& op = it.op;
    const int st = op.stage - 1;
    const Time toff = inst_.offload_time;
    const Time chan = chan_free_[inst_.GroupOf(op.stage)];
    const int f = inst_.Index({op.stage, op.microbatch, OpKind::F});
    switch (it.kind) {
      case SequenceItem::Kind::kCompute: {
        Time ready = compute_free_[st];
        auto need = [&](const OpId& d, Time lag) {
          const Time e = end_[inst_.Index(d)];
          if (e == kUnset) return false;
          ready = std::max(ready, e + lag);
          return true;
        };
        switch (op.kind) {
          case OpKind::F:
            if (op.stage > 1 && !need({op.stage - 1, op.microbatch, OpKind::F}, inst_.comm_time)) {
              return std::nullopt;
            }
            break;
          case OpKind::B:
            if (!need({op.stage, op.microbatch, OpKind::F}, 0)) return std::nullopt;
            if (op.stage < inst_.num_stages &&
                !need({op.stage + 1, op.microbatch, OpKind::B}, inst_.comm_time)) {
              return std::nullopt;
            }
            if (IsOffloaded({op.stage, op.microbatch, OpKind::F})) {
              if (rel_start_[f] == kUnset) return std::nullopt;
              ready = std::max(ready, rel_start_[f] + toff);
            }
            break;
          case OpKind::W:
            if (!need({op.stage, op.microbatch, OpKind::B}, 0)) return std::nullopt;
            break;
        }
        return std::max(ready + inst_.T(op), stage_last_[st]);
      }
      case SequenceItem::Kind::kOffload: {
        if (end_[f] == kUnset) return std::nullopt;
        return std::max(std::max(end_[f], chan) + toff, stage_last_[st]);
      }
      case SequenceItem::Kind::kReload: {
        if (off_start_[f] == kUnset) return std::nullopt;
        return std::max({off_start_[f] + toff, chan, stage_last_[st]});
      }
    }
    return std::nullopt;
  }

  void Place(const SequenceItem& it, Time pt) {
    const int e = inst_.Index(it.op);
    const int st = it.op.stage - 1;
    const int g = inst_.GroupOf(it.op.stage);
    stage_last_[st] = std::max(stage_last_[st], pt);
    switch (it.kind) {
      case SequenceItem::Kind::kCompute:
        end_[e] = pt;
        compute_free_[st] = pt;
        break;
      case SequenceItem::Kind::kOffload:
        off_start_[e] = pt - inst_.offload_time;
        chan_free_[g] = pt;
        break;
      case SequenceItem::Kind::kReload:
        rel_start_[e] = pt;
        chan_free_[g] = pt + inst_.offload_time;
        break;
    }
  }

  std::optional<Schedule> Result() const {
    Schedule s;
    for (const OpId& op : inst_.AllOps()) {
      const Time e = end_[inst_.Index(op)];
      if (e == kUnset) return std::nullopt;
      s.compute.push_back({op, e - inst_.T(op), e});
    }
    for (const OpId& op : offloaded_) {
      const int e = inst_.Index(op);
      if (off_start_[e] == kUnset || rel_start_[e] == kUnset) return std::nullopt;
      s.transfers.push_back({op, TransferKind::kOffload, off_start_[e], off_start_[e] + inst_.offload_time});
      s.transfers.push_back({op, TransferKind::kReload, rel_start_[e], rel_start_[e] + inst_.offload_time});
      s.offloaded.push_back(op);
    }
    s.Normalize();
    return s;
  }

 private:
  const PipelineInstance& inst_;
  std::vector<OpId> offloaded_;
  std::vector<Time> end_, off_start_, rel_start_;
  std::vector<Time> compute_free_, stage_last_, chan_free_;
};

std::string OpToken(const OpId& op) {
  return std::to_string(op.stage) + "," + std::to_string(op.microbatch) + "," + KindChar(op.kind);
}

OpId OpFromToken(const std::string& t) {
  int i = 0, j = 0;
  char k = 0;
  char c1 = 0, c2 = 0;
  std::istringstream in(t);
  if (!(in >> i >> c1 >> j >> c2 >> k) || c1 != ',' || c2 != ',' || i < 1 || j < 1) {
    throw ParseError("bad op token '" + t + "'");
  }
  return {i, j, KindFromChar(k)};
}

char ItemChar(SequenceItem::Kind k) {
  switch (k) {
    case SequenceItem::Kind::kCompute: return 'C';
    case SequenceItem::Kind::kOffload: return 'O';
    case SequenceItem::Kind::kReload: return 'R';
  }
  return 'C';
}

int KeyDistance(const CacheKey& a, const CacheKey& b) {
  if (a.num_stages != b.num_stages || a.num_microbatches != b.num_microbatches ||
      a.post_validation != b.post_validation || a.grid_step != b.grid_step ||
      a.steps.size() != b.steps.size()) {
    return std::numeric_limits<int>::max();
  }
  long long d = 0;
  for (std::size_t k = 0; k < a.steps.size(); ++k) d = std::max(d, std::llabs(a.steps[k] - b.steps[k]));
  return static_cast<int>(std::min<long long>(d, std::numeric_limits<int>::max()));
}

class FileLock {
 public:
  FileLock(const std::filesystem::path& p, bool exclusive) {
    fd_ = ::open(p.c_str(), O_RDWR | O_CREAT, 0644);
    if (fd_ < 0) throw StorageError(p.string() + ": " + std::strerror(errno));
    if (::flock(fd_, exclusive ? LOCK_EX : LOCK_SH) != 0) {
      const std::string msg = std::strerror(errno);
      ::close(fd_);
      throw StorageError(p.string() + ": lock failed: " + msg);
    }
  }
  ~FileLock() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
  FileLock(const FileLock&) = delete;
  FileLock& operator=(const FileLock&) = delete;

 private:
  int fd_ = -1;
};

}  // namespace

std::vector<double> CacheKey::Ratios() const {
  std::vector<double> r;
  for (long long s : steps) r.push_back(static_cast<double>(s) * grid_step);
  return r;
}

CacheKey Discretize(const PipelineInstance& inst, double grid_step) {
  if (!(grid_step > 0)) throw PreconditionViolation("grid step must be positive");
  const double tf = MeanForward(inst);
  if (!(tf > 0)) throw DegenerateInstance("mean forward time is zero");
  double gamma = MeanOver(inst, OpKind::F, true);
  if (!(gamma > 0)) {
    double sum = 0;
    for (int i = 1; i <= inst.num_stages; ++i)
      for (int j = 1; j <= inst.num_microbatches; ++j) sum += static_cast<double>(inst.Delta({i, j, OpKind::F}));
    gamma = sum / (inst.num_stages * inst.num_microbatches);
  }
  double limit = 0;
  for (int i = 1; i <= inst.num_stages; ++i) limit += static_cast<double>(inst.Limit(i));
  limit /= inst.num_stages;
  const double ratios[] = {MeanOver(inst, OpKind::B, false) / tf,
                           MeanOver(inst, OpKind::W, false) / tf,
                           static_cast<double>(inst.comm_time) / tf,
                           static_cast<double>(inst.offload_time) / tf, limit / gamma};
  CacheKey key;
  key.num_stages = inst.num_stages;
  key.num_microbatches = inst.num_microbatches;
  key.post_validation = inst.post_validation;
  key.grid_step = grid_step;
  for (double r : ratios) key.steps.push_back(std::llround(r / grid_step));
  return key;
}

CacheEntry MakeEntry(const PipelineInstance& inst, const Schedule& s, double grid_step) {
  ScheduleIndex idx(s, inst);
  CacheEntry e;
  e.key = Discretize(inst, grid_step);
  e.offloaded = s.offloaded;
  std::sort(e.offloaded.begin(), e.offloaded.end());
  e.order.resize(inst.num_stages);
  std::vector<ComputeEvent> by_start = s.compute;
  std::stable_sort(by_start.begin(), by_start.end(), [](const ComputeEvent& a, const ComputeEvent& b) {
    return a.start != b.start ? a.start < b.start : a.op < b.op;
  });
  for (const auto& c : by_start) e.order[c.op.stage - 1].push_back(c.op);

  struct Ev {
    SequenceItem item;
    Time point;
  };
  std::vector<Ev> pending;
  for (const auto& c : s.compute) pending.push_back({{c.op, SequenceItem::Kind::kCompute}, c.end});
  for (const OpId& op : e.offloaded) {
    pending.push_back({{op, SequenceItem::Kind::kOffload}, idx.Offload(op)->end});
    pending.push_back({{op, SequenceItem::Kind::kReload}, idx.Reload(op)->start});
  }
  auto before = [](const Ev& a, const Ev& b) {
    if (a.point != b.point) return a.point < b.point;
    if (a.item.op != b.item.op) return a.item.op < b.item.op;
    return a.item.kind < b.item.kind;
  };
  std::sort(pending.begin(), pending.end(), before);
  // Prefer an event that lands exactly where it was recorded; otherwise take
  // the earliest recorded one.
  Replayer rp(inst, e.offloaded);
  std::vector<char> used(pending.size(), 0);
  for (std::size_t step = 0; step < pending.size(); ++step) {
    std::size_t pick = pending.size();
    std::size_t fallback = pending.size();
    for (std::size_t q = 0; q < pending.size(); ++q) {
      if (used[q]) continue;
      auto pt = rp.Point(pending[q].item);
      if (!pt) continue;
      if (fallback == pending.size()) fallback = q;
      if (*pt == pending[q].point) {
        pick = q;
        break;
      }
    }
    if (pick == pending.size()) pick = fallback;
    if (pick == pending.size()) throw InvariantViolation("schedule has no consistent event order");
    used[pick] = 1;
    rp.Place(pending[pick].item, *rp.Point(pending[pick].item));
    e.sequence.push_back(pending[pick].item);
  }
  e.makespan_ratio = static_cast<double>(Makespan(s, inst)) / MeanForward(inst);
  return e;
}

std::string EntryToJson(const CacheEntry& e) {
  json key = {{"P", e.key.num_stages},
              {"m", e.key.num_microbatches},
              {"post_validation", e.key.post_validation},
              {"grid", e.key.grid_step},
              {"steps", e.key.steps},
              {"ratios", e.key.Ratios()}};
  json order = json::array();
  for (const auto& stage : e.order) {
    json row = json::array();
    for (const auto& op : stage) row.push_back(OpToken(op));
    order.push_back(row);
  }
  json off = json::array();
  for (const auto& op : e.offloaded) off.push_back(OpToken(op));
  json seq = json::array();
  for (const auto& it : e.sequence) seq.push_back(std::string(1, ItemChar(it.kind)) + ":" + OpToken(it.op));
  json j = {{"key", key},
            {"order", order},
            {"offloaded", off},
            {"sequence", seq},
            {"makespan_ratio", e.makespan_ratio}};
  return j.dump();
}

CacheEntry EntryFromJson(const std::string& line) {
  try {
    const json j = json::parse(line);
    CacheEntry e;
    const json& k = j.at("key");
    e.key.num_stages = k.at("P").get<int>();
    e.key.num_microbatches = k.at("m").get<int>();
    e.key.post_validation = k.at("post_validation").get<bool>();
    e.key.grid_step = k.at("grid").get<double>();
    e.key.steps = k.at("steps").get<std::vector<long long>>();
    for (const auto& row : j.at("order")) {
      std::vector<OpId> stage;
      for (const auto& t : row) stage.push_back(OpFromToken(t.get<std::string>()));
      e.order.push_back(std::move(stage));
    }
    for (const auto& t : j.at("offloaded")) e.offloaded.push_back(OpFromToken(t.get<std::string>()));
    std::sort(e.offloaded.begin(), e.offloaded.end());
    for (const auto& t : j.at("sequence")) {
      const std::string s = t.get<std::string>();
      if (s.size() < 3 || s[1] != ':') throw ParseError("bad sequence item '" + s + "'");
      SequenceItem it;
      it.op = OpFromToken(s.substr(2));
      switch (s[0]) {
        case 'C': it.kind = SequenceItem::Kind::kCompute; break;
        case 'O': it.kind = SequenceItem::Kind::kOffload; break;
        case 'R': it.kind = SequenceItem::Kind::kReload; break;
        default: throw ParseError("bad sequence item '" + s + "'");
      }
      e.sequence.push_back(it);
    }
    e.makespan_ratio = j.at("makespan_ratio").get<double>();
    return e;
  } catch (const json::exception& ex) {
    throw ParseError(ex.what());
  }
}

Cache::Cache(std::filesystem::path db) : db_(std::move(db)) {}

std::vector<CacheEntry> Cache::Load() const {
  warnings_.clear();
  std::vector<CacheEntry> out;
  if (!std::filesystem::exists(db_)) return out;
  FileLock lock(db_, false);
  std::ifstream in(db_);
  if (!in) throw StorageError(db_.string() + ": cannot open for reading");
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(EntryFromJson(line));
    } catch (const ParseError& e) {
      warnings_.push_back(db_.string() + ":" + std::to_string(lineno) + ": skipped corrupt record (" +
                          e.what() + ")");
    }
  }
  if (in.bad()) throw StorageError(db_.string() + ": read failed");
  return out;
}

std::vector<CacheEntry> Cache::List() const {
  std::vector<CacheEntry> best;
  for (auto& e : Load()) {
    auto it = std::find_if(best.begin(), best.end(), [&](const CacheEntry& b) { return b.key == e.key; });
    if (it == best.end()) {
      best.push_back(std::move(e));
    } else if (e.makespan_ratio < it->makespan_ratio) {
      *it = std::move(e);
    }
  }
  return best;
}

void Cache::Store(const CacheEntry& e) {
  if (db_.has_parent_path() && !db_.parent_path().empty()) {
    std::error_code ec;
    std::filesystem::create_directories(db_.parent_path(), ec);
  }
  FileLock lock(db_, true);
  std::vector<CacheEntry> existing;
  bool needs_newline = false;
  {
    std::ifstream in(db_, std::ios::binary);
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    needs_newline = !content.empty() && content.back() != '\n';
    std::istringstream lines(content);
    std::string line;
    while (std::getline(lines, line)) {
      try {
        CacheEntry c = EntryFromJson(line);
        if (c.key == e.key && c.makespan_ratio <= e.makespan_ratio) return;
      } catch (const ParseError&) {
      }
    }
  }
  std::ofstream out(db_, std::ios::app);
  if (!out) throw StorageError(db_.string() + ": cannot open for append");
  if (needs_newline) out << '\n';
  out << EntryToJson(e) << '\n';
  out.flush();
  if (!out) throw StorageError(db_.string() + ": write failed");
}

std::optional<CacheEntry> Cache::Lookup(const CacheKey& key) const {
  std::optional<CacheEntry> best;
  int best_d = std::numeric_limits<int>::max();
  for (auto& e : List()) {
    const int d = KeyDistance(key, e.key);
    if (d > 1) continue;
    if (!best || d < best_d || (d == best_d && e.makespan_ratio < best->makespan_ratio)) {
      best_d = d;
      best = std::move(e);
    }
  }
  return best;
}

std::optional<Schedule> Adapt(const CacheEntry& entry, const PipelineInstance& inst) {
  if (entry.key.num_stages != inst.num_stages || entry.key.num_microbatches != inst.num_microbatches) {
    throw ShapeMismatch("cached entry is for P=" + std::to_string(entry.key.num_stages) +
                        ", m=" + std::to_string(entry.key.num_microbatches) + "; instance has P=" +
                        std::to_string(inst.num_stages) + ", m=" + std::to_string(inst.num_microbatches));
  }
  std::vector<OpId> offloaded;
  for (const OpId& op : entry.offloaded) {
    if (inst.Offloadable(op)) offloaded.push_back(op);
  }
  if (offloaded.size() == entry.offloaded.size()) {
    Replayer rp(inst, offloaded);
    bool ok = true;
    for (const auto& it : entry.sequence) {
      if (rp.Placed(it)) {
        ok = false;
        break;
      }
      auto pt = rp.Point(it);
      if (!pt) {
        ok = false;
        break;
      }
      rp.Place(it, *pt);
    }
    if (ok) {
      if (auto s = rp.Result(); s && Validate(*s, inst, MemorySemantics::kStrict).ok) return s;
    }
  }
  SchedulePlan plan{entry.order, offloaded};
  if (auto s = SimulatePlan(inst, plan); s && Validate(*s, inst, MemorySemantics::kStrict).ok) {
    return s;
  }
  return std::nullopt;
}

WarmStart WarmStartFromCache(const Cache* cache, const PipelineInstance& inst, const AdaParams& p,
                             double grid_step) {
  std::optional<WarmStart> hit;
  if (cache) {
    if (auto entry = cache->Lookup(Discretize(inst, grid_step))) {
      if (auto s = Adapt(*entry, inst)) hit = WarmStart{*s, "cache", Makespan(*s, inst)};
    }
  }
  try {
    NamedSchedule h = BestFeasible(inst, p);
    if (hit && hit->makespan <= h.makespan) return *hit;
    return {h.schedule, h.name, h.makespan};
  } catch (const NoFeasibleSchedule&) {
    if (hit) return *hit;
    throw;
  }
}

}  // namespace pipesched
