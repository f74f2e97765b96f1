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

#ifndef KDSLU_MODULES_HPP
#define KDSLU_MODULES_HPP

#include <string>
#include <utility>
#include <vector>

#include "kdslu/autograd.hpp"

namespace kdslu {

// Ordered, named parameter leaves of one model. Order is creation order, which
// keeps checkpoints, checksums, and optimizer state deterministic.
class ParamStore {
 public:
  Var add(const std::string& name, Tensor init) {
    for (const auto& [n, v] : items_)
      KDSLU_CHECK(n != name, ErrorKind::Internal, "duplicate parameter name: " + name);
    Var v = make_leaf(std::move(init), true);
    items_.emplace_back(name, v);
    return v;
  }

  const std::vector<std::pair<std::string, Var>>& items() const { return items_; }

  Var find(const std::string& name) const {
    for (const auto& [n, v] : items_)
      if (n == name) return v;
    fail(ErrorKind::Internal, "unknown parameter: " + name);
  }

  size_t scalar_count() const {
    size_t n = 0;
    for (const auto& [name, v] : items_) n += v->value.size();
    return n;
  }

  uint64_t checksum() const {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [name, v] : items_) {
      h = fnv1a(name, h);
      h = v->value.checksum(h);
    }
    return h;
  }

  void zero_grads() {
    for (auto& [name, v] : items_) {
      v->grad_ready = false;
      v->grad = Tensor();
    }
  }

  void set_requires_grad(bool on) {
    for (auto& [name, v] : items_) v->requires_grad = on;
  }

  bool any_requires_grad() const {
    for (const auto& [name, v] : items_)
      if (v->requires_grad) return true;
    return false;
  }

 private:
  std::vector<std::pair<std::string, Var>> items_;
};

struct Linear {
  Var w;  // (in, out)
  Var b;  // (1, out)

  Var operator()(const Var& x) const { return add_rowvec(matmul(x, w), b); }
};

inline Linear make_linear(ParamStore& store, const std::string& prefix, int in, int out,
                          Rng& rng) {
  Tensor w({in, out});
  w.fill_gaussian(rng, 1.0 / std::sqrt(static_cast<double>(in)));
  Tensor b({1, out});
  return Linear{store.add(prefix + ".w", std::move(w)), store.add(prefix + ".b", std::move(b))};
}

struct LayerNormParams {
  Var gain;  // (1, d)
  Var bias;  // (1, d)

  Var operator()(const Var& x) const { return layer_norm_rows(x, gain, bias); }
};

inline LayerNormParams make_layer_norm(ParamStore& store, const std::string& prefix, int d) {
  Tensor g({1, d});
  g.fill(1.0);
  Tensor b({1, d});
  return LayerNormParams{store.add(prefix + ".gain", std::move(g)),
                         store.add(prefix + ".bias", std::move(b))};
}

inline Var make_embedding(ParamStore& store, const std::string& name, int vocab, int dim,
                          Rng& rng, double stddev = 0.1) {
  Tensor t({vocab, dim});
  t.fill_gaussian(rng, stddev);
  return store.add(name, std::move(t));
}

}  // namespace kdslu

#endif  // KDSLU_MODULES_HPP
