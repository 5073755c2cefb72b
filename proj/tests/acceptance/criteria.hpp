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

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dynembed::acceptance {

// One release criterion: pass/fail plus the evidence lines the run printed.
struct Outcome {
  bool pass = false;
  std::vector<std::string> details;

  static Outcome ok() { return {true, {}}; }
};

// Shared helpers (criteria_support.cpp).
void note(Outcome& out, const std::string& line);
void fail(Outcome& out, const std::string& line);
void require(Outcome& out, bool condition, const std::string& what);

// Wall-clock budget guard: marks the outcome failed when the measured
// seconds exceed the budget a criterion carries.
void enforce_budget(Outcome& out, double seconds, double budget_seconds,
                    const std::string& label);

Outcome criterion_1();   // single-worker service == reference, bitwise
Outcome criterion_2();   // threaded multi-worker convergence parity
Outcome criterion_3();   // accuracy monotone in vocabulary cutoff
Outcome criterion_4();   // sharded top-k == brute force, any partition
Outcome criterion_5();   // sampler contract: positives, fit, ratios
Outcome criterion_6();   // full-coverage sampling == exact softmax
Outcome criterion_7();   // optimizer traces: 0 ULP + closed form
Outcome criterion_8();   // checkpoint round trips and partial detection
Outcome criterion_9();   // export filters: cutoff and admission
Outcome criterion_10();  // resident-key accounting invariants
Outcome criterion_11();  // sandboxed worker rejects mutation
Outcome criterion_12();  // cell-numerics verifier tool
Outcome criterion_13();  // worker crash, restart, resume

}  // namespace dynembed::acceptance
