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

#include "dynembed/dyncell.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "dynembed/error.hpp"
#include "dynembed/hash.hpp"

namespace dynembed::dyncell {

namespace {

constexpr double kProbSumTolerance = 1e-9;
constexpr double kRouteTolerance = 1e-9;
constexpr double kFdStep = 1e-4;

double dot(const std::vector<float>& w, const std::vector<float>& c) {
  double acc = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    acc += static_cast<double>(w[i]) * static_cast<double>(c[i]);
  }
  return acc;
}

void check_support_dim(const std::vector<std::vector<float>>& support,
                       std::size_t dim, const char* what) {
  if (support.empty()) {
    throw Error(ErrorCode::kInvalidConfig, std::string(what) + ": empty support");
  }
  for (const auto& w : support) {
    if (w.size() != dim) {
      throw Error(ErrorCode::kDimensionMismatch,
                  std::string(what) + ": ragged or mismatched support dims");
    }
  }
}

std::vector<double> logits_of(const std::vector<std::vector<float>>& support,
                              const std::vector<float>& c) {
  check_support_dim(support, c.size(), "conditional");
  std::vector<double> logits(support.size());
  for (std::size_t i = 0; i < support.size(); ++i) logits[i] = dot(support[i], c);
  return logits;
}

double entropy(const std::vector<double>& probs) {
  double h = 0.0;
  for (double p : probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

}  // namespace

void validate_distribution(const DiscreteDistribution& dist) {
  if (dist.support.empty()) {
    throw Error(ErrorCode::kInvalidConfig, "distribution has empty support");
  }
  if (dist.support.size() != dist.probs.size()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "support and probs lengths differ");
  }
  const std::size_t dim = dist.support[0].size();
  check_support_dim(dist.support, dim, "distribution");
  double sum = 0.0;
  for (double p : dist.probs) {
    if (!(p >= 0.0)) {
      throw Error(ErrorCode::kInvalidConfig, "negative or NaN probability");
    }
    sum += p;
  }
  if (std::abs(sum - 1.0) > kProbSumTolerance) {
    throw Error(ErrorCode::kInvalidConfig,
                "probabilities sum to " + std::to_string(sum) + ", expected 1");
  }
}

double log_partition(const std::vector<std::vector<float>>& support,
                     const std::vector<float>& c) {
  const std::vector<double> logits = logits_of(support, c);
  const double max_logit = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double l : logits) sum += std::exp(l - max_logit);
  return max_logit + std::log(sum);
}

DiscreteDistribution conditional(const std::vector<std::vector<float>>& support,
                                 const std::vector<float>& c) {
  const std::vector<double> logits = logits_of(support, c);
  const double max_logit = *std::max_element(logits.begin(), logits.end());
  DiscreteDistribution out;
  out.support = support;
  out.probs.resize(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out.probs[i] = std::exp(logits[i] - max_logit);
    sum += out.probs[i];
  }
  for (double& p : out.probs) p /= sum;
  return out;
}

double internal_surprise(const DiscreteDistribution& p_w,
                         const std::vector<float>& c) {
  validate_distribution(p_w);
  if (p_w.support[0].size() != c.size()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "context dim does not match support dim");
  }

  // Route 1: the KL definition over realized probabilities.
  const DiscreteDistribution p_c = conditional(p_w.support, c);
  double kl = 0.0;
  for (std::size_t i = 0; i < p_w.probs.size(); ++i) {
    const double p = p_w.probs[i];
    if (p <= 0.0) continue;
    if (p_c.probs[i] <= 0.0) {
      throw Error(ErrorCode::kNonFiniteValue,
                  "conditional probability underflowed; surprise is unbounded");
    }
    kl += p * std::log(p / p_c.probs[i]);
  }

  // Route 2: -E_{P_w}<w, c> + log Z(c) - H(P_w).
  double cross = 0.0;
  for (std::size_t i = 0; i < p_w.probs.size(); ++i) {
    cross += p_w.probs[i] * dot(p_w.support[i], c);
  }
  const double expansion = -cross + log_partition(p_w.support, c) - entropy(p_w.probs);

  const double tol = kRouteTolerance * std::max(1.0, std::abs(expansion));
  if (std::abs(kl - expansion) > tol) {
    throw Error(ErrorCode::kInternal,
                "surprise evaluation routes disagree: " + std::to_string(kl) +
                    " vs " + std::to_string(expansion));
  }
  return kl;
}

std::vector<double> internal_equilibrium_residual(const DiscreteDistribution& p_w,
                                                  const std::vector<float>& c) {
  validate_distribution(p_w);
  if (p_w.support[0].size() != c.size()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "context dim does not match support dim");
  }
  const DiscreteDistribution p_c = conditional(p_w.support, c);
  std::vector<double> residual(c.size(), 0.0);
  for (std::size_t i = 0; i < p_w.support.size(); ++i) {
    const double delta = p_c.probs[i] - p_w.probs[i];
    for (std::size_t d = 0; d < residual.size(); ++d) {
      residual[d] += delta * static_cast<double>(p_w.support[i][d]);
    }
  }
  return residual;
}

std::vector<double> upstream_equilibrium_residual(
    const DiscreteDistribution& p_feedback, const DiscreteDistribution& p_action) {
  validate_distribution(p_feedback);
  if (p_action.probs.size() != p_feedback.probs.size()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "feedback and action distributions index different outcome sets");
  }
  double action_sum = 0.0;
  for (double p : p_action.probs) {
    if (!(p >= 0.0)) {
      throw Error(ErrorCode::kInvalidConfig, "negative or NaN probability");
    }
    action_sum += p;
  }
  if (std::abs(action_sum - 1.0) > kProbSumTolerance) {
    throw Error(ErrorCode::kInvalidConfig, "action probabilities do not sum to 1");
  }

  const std::size_t dim = p_feedback.support[0].size();
  std::vector<double> residual(dim, 0.0);
  for (std::size_t i = 0; i < p_feedback.support.size(); ++i) {
    const double delta = p_feedback.probs[i] - p_action.probs[i];
    for (std::size_t d = 0; d < dim; ++d) {
      residual[d] += delta * static_cast<double>(p_feedback.support[i][d]);
    }
  }
  return residual;
}

Reaction reaction(const std::vector<double>& upstream_residual,
                  const std::vector<double>& internal_residual) {
  if (upstream_residual.size() != internal_residual.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "residual dims differ");
  }
  Reaction out;
  out.energy.resize(upstream_residual.size());
  out.product.resize(upstream_residual.size());
  for (std::size_t i = 0; i < upstream_residual.size(); ++i) {
    const double u = upstream_residual[i];
    const double v = internal_residual[i];
    out.energy[i] = (u * u + v * v) / 2.0;
    out.product[i] = u * v;
    // (u - v)^2 >= 0 rearranged; can only trip on a real implementation bug.
    if (out.energy[i] < out.product[i] - 1e-12 * std::max(1.0, std::abs(out.energy[i]))) {
      throw Error(ErrorCode::kInternal, "energy/product inequality violated");
    }
  }
  return out;
}

GradientEquivalenceReport gradient_equivalence_check(
    const std::function<double(const std::vector<double>&)>& loss,
    const std::function<std::vector<double>(const std::vector<double>&)>& loss_grad,
    const std::vector<std::vector<double>>& w_matrix,
    const std::vector<double>& c) {
  const std::size_t out_dim = w_matrix.size();
  const std::size_t in_dim = c.size();
  for (const auto& row : w_matrix) {
    if (row.size() != in_dim) {
      throw Error(ErrorCode::kDimensionMismatch, "cell matrix is ragged");
    }
  }

  auto apply_cell = [&](const std::vector<double>& input) {
    std::vector<double> w(out_dim, 0.0);
    for (std::size_t i = 0; i < out_dim; ++i) {
      for (std::size_t j = 0; j < in_dim; ++j) w[i] += w_matrix[i][j] * input[j];
    }
    return w;
  };

  const std::vector<double> w = apply_cell(c);
  const std::vector<double> analytic_grad_w = loss_grad(w);
  if (analytic_grad_w.size() != out_dim) {
    throw Error(ErrorCode::kDimensionMismatch, "loss gradient has wrong dim");
  }

  // Central differences, h = 1e-4, double accumulation throughout.
  std::vector<double> fd_grad_w(out_dim, 0.0);
  for (std::size_t i = 0; i < out_dim; ++i) {
    std::vector<double> hi = w;
    std::vector<double> lo = w;
    hi[i] += kFdStep;
    lo[i] -= kFdStep;
    fd_grad_w[i] = (loss(hi) - loss(lo)) / (2.0 * kFdStep);
  }

  std::vector<std::vector<double>> fd_jacobian(out_dim,
                                               std::vector<double>(in_dim, 0.0));
  for (std::size_t j = 0; j < in_dim; ++j) {
    std::vector<double> hi = c;
    std::vector<double> lo = c;
    hi[j] += kFdStep;
    lo[j] -= kFdStep;
    const std::vector<double> w_hi = apply_cell(hi);
    const std::vector<double> w_lo = apply_cell(lo);
    for (std::size_t i = 0; i < out_dim; ++i) {
      fd_jacobian[i][j] = (w_hi[i] - w_lo[i]) / (2.0 * kFdStep);
    }
  }

  GradientEquivalenceReport report;
  report.composed.assign(in_dim, 0.0);
  report.analytic.assign(in_dim, 0.0);
  for (std::size_t j = 0; j < in_dim; ++j) {
    for (std::size_t i = 0; i < out_dim; ++i) {
      report.composed[j] += fd_grad_w[i] * fd_jacobian[i][j];
      report.analytic[j] += analytic_grad_w[i] * w_matrix[i][j];
    }
  }

  for (std::size_t i = 0; i < out_dim; ++i) {
    report.loss_grad_fd_deviation = std::max(
        report.loss_grad_fd_deviation, std::abs(fd_grad_w[i] - analytic_grad_w[i]));
    for (std::size_t j = 0; j < in_dim; ++j) {
      report.jacobian_fd_deviation = std::max(
          report.jacobian_fd_deviation,
          std::abs(fd_jacobian[i][j] - w_matrix[i][j]));
    }
  }
  for (std::size_t j = 0; j < in_dim; ++j) {
    report.composed_deviation = std::max(
        report.composed_deviation, std::abs(report.composed[j] - report.analytic[j]));
    report.analytic_grad_norm =
        std::max(report.analytic_grad_norm, std::abs(report.analytic[j]));
  }
  return report;
}

ContextDivergence context_divergence(const std::vector<float>& c1,
                                     const std::vector<float>& c2,
                                     const std::vector<std::vector<float>>& support) {
  if (c1.size() != c2.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "context dims differ");
  }
  check_support_dim(support, c1.size(), "context_divergence");

  const DiscreteDistribution p1 = conditional(support, c1);
  const double log_z1 = log_partition(support, c1);
  const double log_z2 = log_partition(support, c2);

  ContextDivergence out;
  // KL via logits: sum_i p1_i ((<w_i,c1> - logZ1) - (<w_i,c2> - logZ2)).
  double expectation = 0.0;  // E_{P_c1} <w, c1 - c2>
  std::vector<double> diff(c1.size());
  for (std::size_t d = 0; d < c1.size(); ++d) {
    // Widen before subtracting: rounding the difference to f32 would push the
    // two routes apart by more than the identity tolerance.
    diff[d] = static_cast<double>(c1[d]) - static_cast<double>(c2[d]);
  }
  for (std::size_t i = 0; i < support.size(); ++i) {
    out.kl += p1.probs[i] * ((dot(support[i], c1) - log_z1) -
                             (dot(support[i], c2) - log_z2));
    double along_diff = 0.0;
    for (std::size_t d = 0; d < diff.size(); ++d) {
      along_diff += static_cast<double>(support[i][d]) * diff[d];
    }
    expectation += p1.probs[i] * along_diff;
  }
  out.surrogate = expectation - (log_z1 - log_z2);

  const double tol = kRouteTolerance * std::max(1.0, std::abs(out.kl));
  if (std::abs(out.kl - out.surrogate) > tol) {
    throw Error(ErrorCode::kInternal,
                "divergence evaluation routes disagree: " + std::to_string(out.kl) +
                    " vs " + std::to_string(out.surrogate));
  }
  return out;
}

double min_pairwise_divergence(std::uint32_t dim, std::uint32_t n_contexts,
                               std::uint32_t support_size, std::uint64_t seed) {
  if (dim == 0 || n_contexts < 2 || support_size == 0) {
    throw Error(ErrorCode::kInvalidConfig, "need dim >= 1, contexts >= 2, support >= 1");
  }
  std::uint64_t state = fmix64(seed ^ 0x5bf0f1e2d3c4a596ULL);
  auto next_gauss = [&state]() {
    const double u1 = open_unit_double(splitmix64_next(state));
    const double u2 = unit_double(splitmix64_next(state));
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(6.283185307179586476925286766559 * u2);
  };

  auto random_unit = [&](std::size_t n) {
    std::vector<float> v(n);
    double norm_sq = 0.0;
    for (auto& x : v) {
      const double g = next_gauss();
      x = static_cast<float>(g);
      norm_sq += g * g;
    }
    const double norm = std::sqrt(std::max(norm_sq, 1e-300));
    for (auto& x : v) x = static_cast<float>(x / norm);
    return v;
  };

  std::vector<std::vector<float>> support(support_size);
  for (auto& w : support) w = random_unit(dim);

  // Contexts: random directions with radii in [1/2, 1]. The lower radius
  // bound matters: with radii down to 0, the minimum pair is eventually two
  // near-origin contexts whose divergence says nothing about directional
  // crowding, and the dimension trend drowns in that degeneracy.
  std::vector<std::vector<float>> contexts(n_contexts);
  for (auto& c : contexts) {
    c = random_unit(dim);
    const double r = 0.5 + 0.5 * open_unit_double(splitmix64_next(state));
    for (auto& x : c) x = static_cast<float>(x * r);
  }

  double min_kl = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < contexts.size(); ++i) {
    for (std::size_t j = i + 1; j < contexts.size(); ++j) {
      min_kl = std::min(min_kl,
                        context_divergence(contexts[i], contexts[j], support).kl);
    }
  }
  return min_kl;
}

}  // namespace dynembed::dyncell
