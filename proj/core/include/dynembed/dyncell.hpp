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
#include <functional>
#include <vector>

namespace dynembed::dyncell {

// Free-energy cell numerics over finite outcome supports: exponential-family
// conditionals P(w|c) ∝ exp(<w, c>), KL surprise functionals, equilibrium
// residuals, the reaction inequality, and the reduction of the residual
// chain to the ordinary chain-rule gradient for a linear cell. All math runs
// in double; supports are float32 embeddings.

struct DiscreteDistribution {
  std::vector<std::vector<float>> support;  // outcome embeddings, equal dim
  std::vector<double> probs;                // non-negative, sums to 1 (1e-9)
};

// Throws kInvalidConfig for empty support, negative probs, or a prob sum off
// by more than 1e-9; kDimensionMismatch when support and probs lengths differ
// or the support rows are ragged.
void validate_distribution(const DiscreteDistribution& dist);

// log Z(c) = log sum_i exp(<w_i, c>), computed with max-subtraction.
double log_partition(const std::vector<std::vector<float>>& support,
                     const std::vector<float>& c);

// P(w|c): probs_i proportional to exp(<w_i, c>), normalized via
// max-subtraction. c = 0 yields the uniform distribution.
DiscreteDistribution conditional(const std::vector<std::vector<float>>& support,
                                 const std::vector<float>& c);

// KL(P_w || P(.|c)) over P_w's own support. Evaluated twice — once by the KL
// definition over probabilities, once by the expansion
// -sum P_w(x) <w_x, c> + log Z(c) - H(P_w) — and the routes must agree to
// 1e-9 (relative beyond magnitude 1), else kInternal.
double internal_surprise(const DiscreteDistribution& p_w,
                         const std::vector<float>& c);

// <w>_{P_c} - <w>_{P_w} with P_c = conditional(p_w.support, c). Zero exactly
// at the internal equilibrium P_w = P_c, and equal to the gradient of
// internal_surprise with respect to c: for this family d<w,c>/dc = w holds
// exactly, so grad_c KL = <w>_{P_c} - <w>_{P_w} with no approximation. (The
// descent direction on the surprise is the negation.)
std::vector<double> internal_equilibrium_residual(const DiscreteDistribution& p_w,
                                                  const std::vector<float>& c);

// <v>_{P_feedback} - <v>_{P_action} over the feedback embeddings v (the
// support of `p_feedback`; the two distributions index the same outcome set).
// Antisymmetric under swapping the prob vectors on a shared support.
std::vector<double> upstream_equilibrium_residual(
    const DiscreteDistribution& p_feedback, const DiscreteDistribution& p_action);

// Elementwise (up^2 + internal^2)/2 and the companion product up * internal.
// The energy dominates the product elementwise (AM-GM); a violation beyond
// rounding noise throws kInternal because it cannot happen mathematically.
struct Reaction {
  std::vector<double> energy;
  std::vector<double> product;
};
Reaction reaction(const std::vector<double>& upstream_residual,
                  const std::vector<double>& internal_residual);

// For a linear cell w = W c wired to a scalar loss: estimates dL/dw and the
// Jacobian dw/dc by central finite differences (h = 1e-4), composes them
// into dL/dc, and reports the worst absolute deviations of each factor and
// of the composition from the analytic W^T grad_L(w).
struct GradientEquivalenceReport {
  double loss_grad_fd_deviation = 0.0;   // max |FD dL/dw - analytic|
  double jacobian_fd_deviation = 0.0;    // max |FD dw/dc - W|
  double composed_deviation = 0.0;       // max |FD composition - W^T gradL|
  double analytic_grad_norm = 0.0;       // max |W^T gradL| (for relative checks)
  std::vector<double> composed;          // FD-composed dL/dc
  std::vector<double> analytic;          // W^T gradL(w)
};

GradientEquivalenceReport gradient_equivalence_check(
    const std::function<double(const std::vector<double>&)>& loss,
    const std::function<std::vector<double>(const std::vector<double>&)>& loss_grad,
    const std::vector<std::vector<double>>& w_matrix,  // rows: output dim
    const std::vector<double>& c);

// KL(P(.|c1) || P(.|c2)) over the support, plus the exponential-family
// surrogate E_{P_c1}[<w, c1 - c2>] - (log Z(c1) - log Z(c2)). The two are the
// same quantity by algebra and must agree to 1e-9, else kInternal.
struct ContextDivergence {
  double kl = 0.0;
  double surrogate = 0.0;
};
ContextDivergence context_divergence(const std::vector<float>& c1,
                                     const std::vector<float>& c2,
                                     const std::vector<std::vector<float>>& support);

// Crowding probe: `n_contexts` random contexts of norm in [1/2, 1] against a
// random unit-sphere support in `dim` dimensions; returns the minimum pairwise
// context divergence. The norm lower bound keeps a near-origin pair from
// dominating the minimum. Deterministic in the seed. As contexts are added the
// minimum falls; as the dimension grows it rises — the capacity trend the
// divergence is meant to expose.
double min_pairwise_divergence(std::uint32_t dim, std::uint32_t n_contexts,
                               std::uint32_t support_size, std::uint64_t seed);

}  // namespace dynembed::dyncell
