// Copyright 2026 The dynembed Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "criteria.hpp"

#include <cstdio>

namespace dynembed::acceptance {

void note(Outcome& out, const std::string& line) { out.details.push_back(line); }

void fail(Outcome& out, const std::string& line) {
  out.pass = false;
  out.details.push_back("FAILED: " + line);
}

void require(Outcome& out, bool condition, const std::string& what) {
  if (!condition) fail(out, what);
}

void enforce_budget(Outcome& out, double seconds, double budget_seconds,
                    const std::string& label) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%s took %.1fs (budget %.0fs)", label.c_str(),
                seconds, budget_seconds);
  note(out, buf);
  if (seconds > budget_seconds) fail(out, label + " exceeded its runtime budget");
}

}  // namespace dynembed::acceptance
