// Copyright (c) kdslu authors.
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

#ifndef KDSLU_CTC_HPP
#define KDSLU_CTC_HPP

#include <limits>
#include <vector>

#include "kdslu/autograd.hpp"

namespace kdslu {

constexpr double kLogZero = -std::numeric_limits<double>::infinity();

inline double logaddexp(double a, double b) {
  if (a == kLogZero) return b;
  if (b == kLogZero) return a;
  const double m = a > b ? a : b;
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

// Minimum number of frames that admits any alignment: one per label plus one
// separating blank per adjacent repeat.
inline int ctc_min_frames(const std::vector<int>& targets) {
  int repeats = 0;
  for (size_t i = 1; i < targets.size(); ++i)
    if (targets[i] == targets[i - 1]) ++repeats;
  return static_cast<int>(targets.size()) + repeats;
}

// Forward algorithm over the augmented blank-interleaved label sequence.
// log_probs is (T, A) of per-timestep log-probabilities; loss = -log p(targets).
// Gradient w.r.t. log_probs uses the alpha/beta occupancy sums.
inline Var ctc_log_loss(const Var& log_probs, std::vector<int> targets, int blank) {
  KDSLU_CHECK(log_probs->value.rank() == 2, ErrorKind::ShapeError, "ctc: log_probs must be (T,A)");
  const int t_len = log_probs->value.dim(0);
  const int alphabet = log_probs->value.dim(1);
  KDSLU_CHECK(alphabet >= 2, ErrorKind::ShapeError, "ctc: alphabet must include blank + 1 symbol");
  KDSLU_CHECK(blank >= 0 && blank < alphabet, ErrorKind::ShapeError, "ctc: blank out of range");
  for (int c : targets) {
    KDSLU_CHECK(c >= 0 && c < alphabet, ErrorKind::VocabError, "ctc: target symbol out of range");
    KDSLU_CHECK(c != blank, ErrorKind::VocabError, "ctc: target may not contain blank");
  }
  KDSLU_CHECK(t_len >= ctc_min_frames(targets), ErrorKind::InfeasibleAlignment,
              "ctc: transcript too long for the available frames");

  const int s_len = 2 * static_cast<int>(targets.size()) + 1;
  auto label_of = [&targets, blank](int s) {
    return (s % 2 == 0) ? blank : targets[static_cast<size_t>((s - 1) / 2)];
  };

  // alpha(t,s): log-mass of prefix paths in state s after emitting frame t
  Tensor alpha({t_len, s_len});
  alpha.fill(kLogZero);
  const Tensor& lp = log_probs->value;
  alpha.at(0, 0) = lp.at(0, label_of(0));
  if (s_len > 1) alpha.at(0, 1) = lp.at(0, label_of(1));
  for (int t = 1; t < t_len; ++t)
    for (int s = 0; s < s_len; ++s) {
      double acc = alpha.at(t - 1, s);
      if (s >= 1) acc = logaddexp(acc, alpha.at(t - 1, s - 1));
      if (s >= 2 && label_of(s) != blank && label_of(s) != label_of(s - 2))
        acc = logaddexp(acc, alpha.at(t - 1, s - 2));
      alpha.at(t, s) = acc == kLogZero ? kLogZero : acc + lp.at(t, label_of(s));
    }

  double log_p = alpha.at(t_len - 1, s_len - 1);
  if (s_len > 1) log_p = logaddexp(log_p, alpha.at(t_len - 1, s_len - 2));
  KDSLU_CHECK(log_p != kLogZero, ErrorKind::InfeasibleAlignment, "ctc: no feasible alignment");

  Tensor out({1});
  out[0] = -log_p;
  return make_node(
      std::move(out), {log_probs},
      [t_len, s_len, alphabet, blank, targets = std::move(targets), alpha = std::move(alpha),
       log_p](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        auto label_of = [&targets, blank](int s) {
          return (s % 2 == 0) ? blank : targets[static_cast<size_t>((s - 1) / 2)];
        };
        const Tensor& lp = self.parents[0]->value;
        // beta(t,s): log-mass of suffix paths leaving state s after frame t,
        // excluding the emission at frame t itself
        Tensor beta({t_len, s_len});
        beta.fill(kLogZero);
        beta.at(t_len - 1, s_len - 1) = 0.0;
        if (s_len > 1) beta.at(t_len - 1, s_len - 2) = 0.0;
        for (int t = t_len - 2; t >= 0; --t)
          for (int s = 0; s < s_len; ++s) {
            double acc = beta.at(t + 1, s) == kLogZero
                             ? kLogZero
                             : beta.at(t + 1, s) + lp.at(t + 1, label_of(s));
            if (s + 1 < s_len && beta.at(t + 1, s + 1) != kLogZero)
              acc = logaddexp(acc, beta.at(t + 1, s + 1) + lp.at(t + 1, label_of(s + 1)));
            if (s + 2 < s_len && label_of(s + 2) != blank && label_of(s + 2) != label_of(s) &&
                beta.at(t + 1, s + 2) != kLogZero)
              acc = logaddexp(acc, beta.at(t + 1, s + 2) + lp.at(t + 1, label_of(s + 2)));
            beta.at(t, s) = acc;
          }

        Tensor& g = grad_of(*self.parents[0]);
        const double gscale = self.grad[0];
        for (int t = 0; t < t_len; ++t) {
          std::vector<double> occ(static_cast<size_t>(alphabet), kLogZero);
          for (int s = 0; s < s_len; ++s) {
            if (alpha.at(t, s) == kLogZero || beta.at(t, s) == kLogZero) continue;
            const int k = label_of(s);
            occ[static_cast<size_t>(k)] =
                logaddexp(occ[static_cast<size_t>(k)], alpha.at(t, s) + beta.at(t, s));
          }
          for (int k = 0; k < alphabet; ++k) {
            if (occ[static_cast<size_t>(k)] == kLogZero) continue;
            g.at(t, k) += gscale * -std::exp(occ[static_cast<size_t>(k)] - log_p);
          }
        }
      });
}

// Per-timestep argmax, collapse repeats, drop blanks.
inline std::vector<int> ctc_greedy_collapse(const Tensor& scores, int blank) {
  KDSLU_CHECK(scores.rank() == 2 && scores.dim(0) >= 1, ErrorKind::ShapeError,
              "greedy decode needs (T,A) scores");
  std::vector<int> out;
  int prev = -1;
  for (int t = 0; t < scores.dim(0); ++t) {
    int best = 0;
    for (int k = 1; k < scores.dim(1); ++k)
      if (scores.at(t, k) > scores.at(t, best)) best = k;
    if (best != blank && best != prev) out.push_back(best);
    prev = best;
  }
  return out;
}

}  // namespace kdslu

#endif  // KDSLU_CTC_HPP
