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
#include <sstream>

#include "pipesched/errors.hpp"
#include "pipesched/schedule.hpp"

namespace pipesched {

namespace {

constexpr int kUnit = 24;     // pixels per time quantum
constexpr int kRow = 28;      // pixels per row
constexpr int kLeft = 72;     // label gutter
constexpr int kTop = 8;

const char* Fill(char label) {
  switch (label) {
    case 'F': return "#4e79a7";
    case 'B': return "#59a14f";
    case 'W': return "#f28e2b";
    case 'O': return "#b07aa1";
    default: return "#9c755f";
  }
}

void Block(std::ostringstream& os, Time start, Time end, int row, char label, int mb) {
  const long x = kLeft + start * kUnit;
  const long w = std::max<Time>(end - start, 0) * kUnit;
  const int y = kTop + row * kRow;
  os << "<rect x=\"" << x << "\" y=\"" << y + 2 << "\" width=\"" << w
     << "\" height=\"" << kRow - 4 << "\" fill=\"" << Fill(label)
     << "\" stroke=\"#222\" stroke-width=\"1\"/>\n";
  os << "<text x=\"" << x + w / 2 << "\" y=\"" << y + kRow / 2 + 5
     << "\" class=\"op\">" << label << mb << "</text>\n";
}

}  // namespace

std::string GanttSvg(const Schedule& s, const PipelineInstance& inst) {
  ValidationReport rep = Validate(s, inst, MemorySemantics::kMilpRelaxed);
  if (!rep.ok) throw InvalidSchedule("cannot render: " + rep.Summary());

  Schedule sorted = s;
  sorted.Normalize();
  Time horizon = 0;
  for (const auto& ev : sorted.compute) horizon = std::max(horizon, ev.end);
  for (const auto& ev : sorted.transfers) horizon = std::max(horizon, ev.end);
  const int rows = 2 * inst.num_stages;
  const long width = kLeft + horizon * kUnit + 16;
  const long height = kTop + rows * kRow + 24;

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
     << height << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n";
  os << "<style>text{font-family:monospace;font-size:12px}"
        ".op{text-anchor:middle;fill:#fff}</style>\n";
  for (int i = 1; i <= inst.num_stages; ++i) {
    const int cy = kTop + (2 * (i - 1)) * kRow + kRow / 2 + 5;
    os << "<text x=\"4\" y=\"" << cy << "\">stage " << i << "</text>\n";
    os << "<text x=\"4\" y=\"" << cy + kRow << "\">  h2d " << i << "</text>\n";
  }
  for (Time t = 0; t <= horizon; ++t) {
    const long x = kLeft + t * kUnit;
    os << "<line x1=\"" << x << "\" y1=\"" << kTop << "\" x2=\"" << x << "\" y2=\""
       << kTop + rows * kRow << "\" stroke=\"#ddd\"/>\n";
  }

  std::vector<const ComputeEvent*> compute;
  for (const auto& ev : sorted.compute) compute.push_back(&ev);
  std::stable_sort(compute.begin(), compute.end(), [](auto* a, auto* b) {
    return std::tie(a->op.stage, a->start) < std::tie(b->op.stage, b->start);
  });
  for (const auto* ev : compute) {
    Block(os, ev->start, ev->end, 2 * (ev->op.stage - 1), KindChar(ev->op.kind),
          ev->op.microbatch);
  }
  std::vector<const TransferEvent*> transfers;
  for (const auto& ev : sorted.transfers) transfers.push_back(&ev);
  std::stable_sort(transfers.begin(), transfers.end(), [](auto* a, auto* b) {
    return std::tie(a->op.stage, a->start) < std::tie(b->op.stage, b->start);
  });
  for (const auto* ev : transfers) {
    Block(os, ev->start, ev->end, 2 * (ev->op.stage - 1) + 1,
          ev->kind == TransferKind::kOffload ? 'O' : 'R', ev->op.microbatch);
  }
  os << "<text x=\"" << kLeft << "\" y=\"" << height - 6 << "\">t=0</text>\n";
  os << "<text x=\"" << kLeft + horizon * kUnit << "\" y=\"" << height - 6
     << "\" text-anchor=\"end\">t=" << horizon << "</text>\n";
  os << "</svg>\n";
  return os.str();
}

}  // namespace pipesched
