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

#ifndef KDSLU_AUTOGRAD_HPP
#define KDSLU_AUTOGRAD_HPP

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "kdslu/tensor.hpp"

namespace kdslu {

// Reverse-mode tape over Tensor-valued nodes. Nodes built from inputs that do
// not require gradients collapse to constants, so a frozen model's forward pass
// records no tape at all.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  bool grad_ready = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this->grad, accumulates into parents' grads. Must reach inputs via
  // self.parents, never via captured shared_ptrs, so releasing the tape frees
  // every intermediate.
  std::function<void(Node&)> backprop;
};

using Var = std::shared_ptr<Node>;

inline Tensor& grad_of(Node& n) {
  if (!n.grad_ready) {
    n.grad = Tensor(n.value.shape());
    n.grad_ready = true;
  }
  return n.grad;
}

inline Var make_leaf(Tensor value, bool requires_grad = false) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return n;
}

inline Var constant(Tensor value) { return make_leaf(std::move(value), false); }

inline Var make_node(Tensor value, std::vector<Var> parents,
                     std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  for (const Var& p : parents) n->requires_grad = n->requires_grad || p->requires_grad;
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  return n;
}

inline double scalar_value(const Var& v) {
  KDSLU_CHECK(v->value.size() == 1, ErrorKind::Internal, "expected scalar node");
  return v->value[0];
}

inline void collect_topo(const Var& root, std::vector<Node*>& order) {
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    Node* n = stack.back().first;
    size_t& i = stack.back().second;
    if (i < n->parents.size()) {
      Node* p = n->parents[i].get();
      ++i;
      if (!seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
}

// Frees the tape hanging off `root` without deep recursive destruction.
inline void release_graph(const Var& root) {
  std::vector<Node*> order;
  collect_topo(root, order);
  for (Node* n : order) {
    n->parents.clear();
    n->backprop = nullptr;
  }
}

// Accumulates gradients of a scalar root into every reachable node that
// requires them, then (by default) releases the tape. Parameter leaves keep
// their grads for the optimizer.
inline void backward(const Var& root, bool release = true) {
  KDSLU_CHECK(root->value.size() == 1, ErrorKind::Internal, "backward needs a scalar root");
  std::vector<Node*> order;
  collect_topo(root, order);
  grad_of(*root)[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && n->grad_ready) n->backprop(*n);
  }
  if (release) {
    for (Node* n : order) {
      n->parents.clear();
      n->backprop = nullptr;
    }
  }
}

// ---------------------------------------------------------------------------
// elementwise ops

inline Var add(const Var& a, const Var& b) {
  KDSLU_CHECK(a->value.same_shape(b->value), ErrorKind::ShapeError, "add: shape mismatch");
  Tensor out(a->value.shape());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] + b->value[i];
  return make_node(std::move(out), {a, b}, [](Node& self) {
    for (int k = 0; k < 2; ++k) {
      Node& p = *self.parents[k];
      if (!p.requires_grad) continue;
      Tensor& g = grad_of(p);
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

inline Var sub(const Var& a, const Var& b) {
  KDSLU_CHECK(a->value.same_shape(b->value), ErrorKind::ShapeError, "sub: shape mismatch");
  Tensor out(a->value.shape());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] - b->value[i];
  return make_node(std::move(out), {a, b}, [](Node& self) {
    if (self.parents[0]->requires_grad) {
      Tensor& g = grad_of(*self.parents[0]);
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (self.parents[1]->requires_grad) {
      Tensor& g = grad_of(*self.parents[1]);
      for (size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

inline Var mul(const Var& a, const Var& b) {
  KDSLU_CHECK(a->value.same_shape(b->value), ErrorKind::ShapeError, "mul: shape mismatch");
  Tensor out(a->value.shape());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] * b->value[i];
  return make_node(std::move(out), {a, b}, [](Node& self) {
    const Tensor& av = self.parents[0]->value;
    const Tensor& bv = self.parents[1]->value;
    if (self.parents[0]->requires_grad) {
      Tensor& g = grad_of(*self.parents[0]);
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (self.parents[1]->requires_grad) {
      Tensor& g = grad_of(*self.parents[1]);
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

inline Var scale(const Var& a, double s) {
  Tensor out(a->value.shape());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] * s;
  return make_node(std::move(out), {a}, [s](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor& g = grad_of(*self.parents[0]);
    for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
  });
}

inline Var neg(const Var& a) { return scale(a, -1.0); }

template <typename F, typename DF>
inline Var unary_smooth(const Var& a, F f, DF df) {
  Tensor out(a->value.shape());
  for (size_t i = 0; i < out.size(); ++i) out[i] = f(a->value[i]);
  return make_node(std::move(out), {a}, [df](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    const Tensor& x = self.parents[0]->value;
    const Tensor& y = self.value;
    Tensor& g = grad_of(*self.parents[0]);
    for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * df(x[i], y[i]);
  });
}

inline Var tanh_op(const Var& a) {
  return unary_smooth(
      a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

inline Var sigmoid(const Var& a) {
  return unary_smooth(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

// tanh approximation of GELU; smooth everywhere, so finite differences behave
inline Var gelu(const Var& a) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  return unary_smooth(
      a,
      [](double x) { return 0.5 * x * (1.0 + std::tanh(kC * (x + kA * x * x * x))); },
      [](double x, double) {
        double t = std::tanh(kC * (x + kA * x * x * x));
        double dt = (1.0 - t * t) * kC * (1.0 + 3.0 * kA * x * x);
        return 0.5 * (1.0 + t) + 0.5 * x * dt;
      });
}

inline Var abs_val(const Var& a) {
  return unary_smooth(
      a, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

// ---------------------------------------------------------------------------
// matrix ops (2D)

inline Var matmul(const Var& a, const Var& b) {
  KDSLU_CHECK(a->value.rank() == 2 && b->value.rank() == 2 && a->value.dim(1) == b->value.dim(0),
              ErrorKind::ShapeError, "matmul: incompatible shapes");
  const int m = a->value.dim(0), k = a->value.dim(1), n = b->value.dim(1);
  Tensor out({m, n});
  const double* ap = a->value.data();
  const double* bp = b->value.data();
  double* op = out.data();
  for (int i = 0; i < m; ++i) {
    for (int kk = 0; kk < k; ++kk) {
      const double av = ap[i * k + kk];
      if (av == 0.0) continue;
      const double* brow = bp + kk * n;
      double* orow = op + i * n;
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return make_node(std::move(out), {a, b}, [m, k, n](Node& self) {
    const double* g = self.grad.data();
    if (self.parents[0]->requires_grad) {
      Tensor& ga = grad_of(*self.parents[0]);
      const double* bp = self.parents[1]->value.data();
      for (int i = 0; i < m; ++i)
        for (int kk = 0; kk < k; ++kk) {
          double acc = 0.0;
          const double* grow = g + i * n;
          const double* brow = bp + kk * n;
          for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
          ga.data()[i * k + kk] += acc;
        }
    }
    if (self.parents[1]->requires_grad) {
      Tensor& gb = grad_of(*self.parents[1]);
      const double* ap = self.parents[0]->value.data();
      for (int i = 0; i < m; ++i) {
        const double* grow = g + i * n;
        for (int kk = 0; kk < k; ++kk) {
          const double av = ap[i * k + kk];
          if (av == 0.0) continue;
          double* gbrow = gb.data() + kk * n;
          for (int j = 0; j < n; ++j) gbrow[j] += av * grow[j];
        }
      }
    }
  });
}

inline Var transpose(const Var& a) {
  KDSLU_CHECK(a->value.rank() == 2, ErrorKind::ShapeError, "transpose: rank-2 only");
  const int m = a->value.dim(0), n = a->value.dim(1);
  Tensor out({n, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.at(j, i) = a->value.at(i, j);
  return make_node(std::move(out), {a}, [m, n](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor& g = grad_of(*self.parents[0]);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) g.at(i, j) += self.grad.at(j, i);
  });
}

// broadcast a (1,d) row over every row of m (n,d)
inline Var add_rowvec(const Var& m, const Var& r) {
  KDSLU_CHECK(m->value.rank() == 2 && r->value.rank() == 2 && r->value.dim(0) == 1 &&
                  r->value.dim(1) == m->value.dim(1),
              ErrorKind::ShapeError, "add_rowvec: shape mismatch");
  const int n = m->value.dim(0), d = m->value.dim(1);
  Tensor out({n, d});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out.at(i, j) = m->value.at(i, j) + r->value.at(0, j);
  return make_node(std::move(out), {m, r}, [n, d](Node& self) {
    if (self.parents[0]->requires_grad) {
      Tensor& g = grad_of(*self.parents[0]);
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (self.parents[1]->requires_grad) {
      Tensor& g = grad_of(*self.parents[1]);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) g.at(0, j) += self.grad.at(i, j);
    }
  });
}

// gather rows by index; duplicates allowed (backward scatter-adds)
inline Var rows(const Var& table, std::vector<int> ids) {
  KDSLU_CHECK(table->value.rank() == 2, ErrorKind::ShapeError, "rows: rank-2 only");
  const int n = static_cast<int>(ids.size());
  const int d = table->value.dim(1);
  for (int id : ids)
    KDSLU_CHECK(id >= 0 && id < table->value.dim(0), ErrorKind::ShapeError, "rows: id out of range");
  Tensor out({n, d});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out.at(i, j) = table->value.at(ids[i], j);
  return make_node(std::move(out), {table}, [ids = std::move(ids), d](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor& g = grad_of(*self.parents[0]);
    for (size_t i = 0; i < ids.size(); ++i)
      for (int j = 0; j < d; ++j) g.at(ids[i], j) += self.grad.at(static_cast<int>(i), j);
  });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  KDSLU_CHECK(!parts.empty(), ErrorKind::ShapeError, "concat_rows: empty");
  const int d = parts[0]->value.dim(1);
  int total = 0;
  for (const Var& p : parts) {
    KDSLU_CHECK(p->value.rank() == 2 && p->value.dim(1) == d, ErrorKind::ShapeError,
                "concat_rows: column mismatch");
    total += p->value.dim(0);
  }
  Tensor out({total, d});
  int r = 0;
  for (const Var& p : parts) {
    for (int i = 0; i < p->value.dim(0); ++i, ++r)
      for (int j = 0; j < d; ++j) out.at(r, j) = p->value.at(i, j);
  }
  return make_node(std::move(out), parts, [d](Node& self) {
    int r = 0;
    for (const Var& pv : self.parents) {
      Node& p = *pv;
      const int pr = p.value.dim(0);
      if (p.requires_grad) {
        Tensor& g = grad_of(p);
        for (int i = 0; i < pr; ++i)
          for (int j = 0; j < d; ++j) g.at(i, j) += self.grad.at(r + i, j);
      }
      r += pr;
    }
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  KDSLU_CHECK(!parts.empty(), ErrorKind::ShapeError, "concat_cols: empty");
  const int n = parts[0]->value.dim(0);
  int total = 0;
  for (const Var& p : parts) {
    KDSLU_CHECK(p->value.rank() == 2 && p->value.dim(0) == n, ErrorKind::ShapeError,
                "concat_cols: row mismatch");
    total += p->value.dim(1);
  }
  Tensor out({n, total});
  int c = 0;
  for (const Var& p : parts) {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < p->value.dim(1); ++j) out.at(i, c + j) = p->value.at(i, j);
    c += p->value.dim(1);
  }
  return make_node(std::move(out), parts, [n](Node& self) {
    int c = 0;
    for (const Var& pv : self.parents) {
      Node& p = *pv;
      const int pc = p.value.dim(1);
      if (p.requires_grad) {
        Tensor& g = grad_of(p);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < pc; ++j) g.at(i, j) += self.grad.at(i, c + j);
      }
      c += pc;
    }
  });
}

inline Var slice_rows(const Var& a, int r0, int r1) {
  KDSLU_CHECK(a->value.rank() == 2 && 0 <= r0 && r0 < r1 && r1 <= a->value.dim(0),
              ErrorKind::ShapeError, "slice_rows: bad range");
  const int d = a->value.dim(1);
  Tensor out({r1 - r0, d});
  for (int i = r0; i < r1; ++i)
    for (int j = 0; j < d; ++j) out.at(i - r0, j) = a->value.at(i, j);
  return make_node(std::move(out), {a}, [r0, r1, d](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor& g = grad_of(*self.parents[0]);
    for (int i = r0; i < r1; ++i)
      for (int j = 0; j < d; ++j) g.at(i, j) += self.grad.at(i - r0, j);
  });
}

inline Var slice_cols(const Var& a, int c0, int c1) {
  KDSLU_CHECK(a->value.rank() == 2 && 0 <= c0 && c0 < c1 && c1 <= a->value.dim(1),
              ErrorKind::ShapeError, "slice_cols: bad range");
  const int n = a->value.dim(0);
  Tensor out({n, c1 - c0});
  for (int i = 0; i < n; ++i)
    for (int j = c0; j < c1; ++j) out.at(i, j - c0) = a->value.at(i, j);
  return make_node(std::move(out), {a}, [n, c0, c1](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor& g = grad_of(*self.parents[0]);
    for (int i = 0; i < n; ++i)
      for (int j = c0; j < c1; ++j) g.at(i, j) += self.grad.at(i, j - c0);
  });
}

inline Var row(const Var& a, int r) { return slice_rows(a, r, r + 1); }

inline Var select(const Var& a, int r, int c) {
  KDSLU_CHECK(a->value.rank() == 2 && r < a->value.dim(0) && c < a->value.dim(1),
              ErrorKind::ShapeError, "select: out of range");
  Tensor out({1});
  out[0] = a->value.at(r, c);
  return make_node(std::move(out), {a}, [r, c](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    grad_of(*self.parents[0]).at(r, c) += self.grad[0];
  });
}

// out[i] = m[i, cols[i]]
inline Var pick_per_row(const Var& m, std::vector<int> cols) {
  KDSLU_CHECK(m->value.rank() == 2 && static_cast<int>(cols.size()) == m->value.dim(0),
              ErrorKind::ShapeError, "pick_per_row: size mismatch");
  const int n = m->value.dim(0);
  for (int i = 0; i < n; ++i)
    KDSLU_CHECK(cols[i] >= 0 && cols[i] < m->value.dim(1), ErrorKind::ShapeError,
                "pick_per_row: column out of range");
  Tensor out({n, 1});
  for (int i = 0; i < n; ++i) out.at(i, 0) = m->value.at(i, cols[i]);
  return make_node(std::move(out), {m}, [cols = std::move(cols)](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor& g = grad_of(*self.parents[0]);
    for (size_t i = 0; i < cols.size(); ++i)
      g.at(static_cast<int>(i), cols[i]) += self.grad.at(static_cast<int>(i), 0);
  });
}

// same data, new shape
inline Var reshape(const Var& a, std::vector<int> shape) {
  Tensor out(shape);
  KDSLU_CHECK(out.size() == a->value.size(), ErrorKind::ShapeError, "reshape: size mismatch");
  for (size_t i = 0; i < out.size(); ++i) out[i] = a->value[i];
  return make_node(std::move(out), {a}, [](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor& g = grad_of(*self.parents[0]);
    for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

// (C,H,W) -> (H, C*W): rows become timesteps, channels unrolled per step
inline Var time_major(const Var& a) {
  KDSLU_CHECK(a->value.rank() == 3, ErrorKind::ShapeError, "time_major: rank-3 only");
  const int c = a->value.dim(0), h = a->value.dim(1), w = a->value.dim(2);
  Tensor out({h, c * w});
  for (int ci = 0; ci < c; ++ci)
    for (int hi = 0; hi < h; ++hi)
      for (int wi = 0; wi < w; ++wi) out.at(hi, ci * w + wi) = a->value.at(ci, hi, wi);
  return make_node(std::move(out), {a}, [c, h, w](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor& g = grad_of(*self.parents[0]);
    for (int ci = 0; ci < c; ++ci)
      for (int hi = 0; hi < h; ++hi)
        for (int wi = 0; wi < w; ++wi) g.at(ci, hi, wi) += self.grad.at(hi, ci * w + wi);
  });
}

// ---------------------------------------------------------------------------
// reductions

inline Var sum(const Var& a) {
  Tensor out({1});
  double acc = 0.0;
  for (size_t i = 0; i < a->value.size(); ++i) acc += a->value[i];
  out[0] = acc;
  return make_node(std::move(out), {a}, [](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor& g = grad_of(*self.parents[0]);
    for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0];
  });
}

inline Var mean_all(const Var& a) {
  return scale(sum(a), 1.0 / static_cast<double>(a->value.size()));
}

// columnwise max over rows: (n,d) -> (1,d); ties go to the lowest row
inline Var max_over_rows(const Var& a) {
  KDSLU_CHECK(a->value.rank() == 2, ErrorKind::ShapeError, "max_over_rows: rank-2 only");
  const int n = a->value.dim(0), d = a->value.dim(1);
  Tensor out({1, d});
  std::vector<int> arg(static_cast<size_t>(d), 0);
  for (int j = 0; j < d; ++j) {
    double best = a->value.at(0, j);
    int bi = 0;
    for (int i = 1; i < n; ++i)
      if (a->value.at(i, j) > best) {
        best = a->value.at(i, j);
        bi = i;
      }
    out.at(0, j) = best;
    arg[static_cast<size_t>(j)] = bi;
  }
  return make_node(std::move(out), {a}, [arg = std::move(arg), d](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor& g = grad_of(*self.parents[0]);
    for (int j = 0; j < d; ++j) g.at(arg[static_cast<size_t>(j)], j) += self.grad.at(0, j);
  });
}

// ---------------------------------------------------------------------------
// row-normalizing ops

inline Var softmax_rows(const Var& a) {
  KDSLU_CHECK(a->value.rank() == 2, ErrorKind::ShapeError, "softmax_rows: rank-2 only");
  const int n = a->value.dim(0), d = a->value.dim(1);
  Tensor out({n, d});
  for (int i = 0; i < n; ++i) {
    double mx = a->value.at(i, 0);
    for (int j = 1; j < d; ++j) mx = std::max(mx, a->value.at(i, j));
    double z = 0.0;
    for (int j = 0; j < d; ++j) {
      out.at(i, j) = std::exp(a->value.at(i, j) - mx);
      z += out.at(i, j);
    }
    for (int j = 0; j < d; ++j) out.at(i, j) /= z;
  }
  return make_node(std::move(out), {a}, [n, d](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor& g = grad_of(*self.parents[0]);
    for (int i = 0; i < n; ++i) {
      double dot = 0.0;
      for (int j = 0; j < d; ++j) dot += self.grad.at(i, j) * self.value.at(i, j);
      for (int j = 0; j < d; ++j)
        g.at(i, j) += self.value.at(i, j) * (self.grad.at(i, j) - dot);
    }
  });
}

inline Var log_softmax_rows(const Var& a) {
  KDSLU_CHECK(a->value.rank() == 2, ErrorKind::ShapeError, "log_softmax_rows: rank-2 only");
  const int n = a->value.dim(0), d = a->value.dim(1);
  Tensor out({n, d});
  for (int i = 0; i < n; ++i) {
    double mx = a->value.at(i, 0);
    for (int j = 1; j < d; ++j) mx = std::max(mx, a->value.at(i, j));
    double z = 0.0;
    for (int j = 0; j < d; ++j) z += std::exp(a->value.at(i, j) - mx);
    const double lz = mx + std::log(z);
    for (int j = 0; j < d; ++j) out.at(i, j) = a->value.at(i, j) - lz;
  }
  return make_node(std::move(out), {a}, [n, d](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor& g = grad_of(*self.parents[0]);
    for (int i = 0; i < n; ++i) {
      double gsum = 0.0;
      for (int j = 0; j < d; ++j) gsum += self.grad.at(i, j);
      for (int j = 0; j < d; ++j)
        g.at(i, j) += self.grad.at(i, j) - std::exp(self.value.at(i, j)) * gsum;
    }
  });
}

inline Var layer_norm_rows(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5) {
  KDSLU_CHECK(x->value.rank() == 2 && gain->value.rank() == 2 && bias->value.rank() == 2,
              ErrorKind::ShapeError, "layer_norm: rank-2 only");
  const int n = x->value.dim(0), d = x->value.dim(1);
  KDSLU_CHECK(gain->value.dim(0) == 1 && gain->value.dim(1) == d && bias->value.dim(0) == 1 &&
                  bias->value.dim(1) == d,
              ErrorKind::ShapeError, "layer_norm: gain/bias must be (1,d)");
  Tensor out({n, d});
  Tensor xhat({n, d});
  std::vector<double> inv_std(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    double mu = 0.0;
    for (int j = 0; j < d; ++j) mu += x->value.at(i, j);
    mu /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
      double t = x->value.at(i, j) - mu;
      var += t * t;
    }
    var /= d;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(i)] = is;
    for (int j = 0; j < d; ++j) {
      xhat.at(i, j) = (x->value.at(i, j) - mu) * is;
      out.at(i, j) = xhat.at(i, j) * gain->value.at(0, j) + bias->value.at(0, j);
    }
  }
  return make_node(
      std::move(out), {x, gain, bias},
      [n, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        const Tensor& gv = self.parents[1]->value;
        if (self.parents[1]->requires_grad) {
          Tensor& gg = grad_of(*self.parents[1]);
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) gg.at(0, j) += self.grad.at(i, j) * xhat.at(i, j);
        }
        if (self.parents[2]->requires_grad) {
          Tensor& gb = grad_of(*self.parents[2]);
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) gb.at(0, j) += self.grad.at(i, j);
        }
        if (self.parents[0]->requires_grad) {
          Tensor& gx = grad_of(*self.parents[0]);
          for (int i = 0; i < n; ++i) {
            double m1 = 0.0, m2 = 0.0;
            for (int j = 0; j < d; ++j) {
              const double gy = self.grad.at(i, j) * gv.at(0, j);
              m1 += gy;
              m2 += gy * xhat.at(i, j);
            }
            m1 /= d;
            m2 /= d;
            for (int j = 0; j < d; ++j) {
              const double gy = self.grad.at(i, j) * gv.at(0, j);
              gx.at(i, j) += (gy - m1 - xhat.at(i, j) * m2) * inv_std[static_cast<size_t>(i)];
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// 2D convolution, "same"-style zero padding then stride (output = ceil(in/stride))

inline int conv_same_out(int in, int stride) { return (in + stride - 1) / stride; }

inline Var conv2d_same(const Var& input, const Var& weight, const Var& bias, int sh, int sw) {
  KDSLU_CHECK(input->value.rank() == 3, ErrorKind::ShapeError, "conv2d: input must be (Cin,H,W)");
  KDSLU_CHECK(weight->value.rank() == 4, ErrorKind::ShapeError,
              "conv2d: weight must be (Cout,Cin,kh,kw)");
  const int cin = input->value.dim(0), h = input->value.dim(1), w = input->value.dim(2);
  const int cout = weight->value.dim(0), kh = weight->value.dim(2), kw = weight->value.dim(3);
  KDSLU_CHECK(weight->value.dim(1) == cin, ErrorKind::ShapeError, "conv2d: channel mismatch");
  KDSLU_CHECK(bias->value.rank() == 1 && bias->value.dim(0) == cout, ErrorKind::ShapeError,
              "conv2d: bias must be (Cout)");
  KDSLU_CHECK(sh >= 1 && sw >= 1, ErrorKind::ShapeError, "conv2d: strides must be >= 1");
  const int oh = conv_same_out(h, sh), ow = conv_same_out(w, sw);
  const int pad_h = std::max(0, (oh - 1) * sh + kh - h);
  const int pad_w = std::max(0, (ow - 1) * sw + kw - w);
  const int ph0 = pad_h / 2, pw0 = pad_w / 2;

  Tensor out({cout, oh, ow});
  for (int co = 0; co < cout; ++co)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        double acc = bias->value[static_cast<size_t>(co)];
        for (int ci = 0; ci < cin; ++ci)
          for (int ky = 0; ky < kh; ++ky) {
            const int iy = oy * sh - ph0 + ky;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < kw; ++kx) {
              const int ix = ox * sw - pw0 + kx;
              if (ix < 0 || ix >= w) continue;
              acc += input->value.at(ci, iy, ix) * weight->value.at(co, ci, ky, kx);
            }
          }
        out.at(co, oy, ox) = acc;
      }

  return make_node(std::move(out), {input, weight, bias},
                   [cin, h, w, cout, kh, kw, sh, sw, oh, ow, ph0, pw0](Node& self) {
                     Node& in = *self.parents[0];
                     Node& wt = *self.parents[1];
                     Node& bs = *self.parents[2];
                     for (int co = 0; co < cout; ++co)
                       for (int oy = 0; oy < oh; ++oy)
                         for (int ox = 0; ox < ow; ++ox) {
                           const double g = self.grad.at(co, oy, ox);
                           if (g == 0.0) continue;
                           if (bs.requires_grad) grad_of(bs)[static_cast<size_t>(co)] += g;
                           for (int ci = 0; ci < cin; ++ci)
                             for (int ky = 0; ky < kh; ++ky) {
                               const int iy = oy * sh - ph0 + ky;
                               if (iy < 0 || iy >= h) continue;
                               for (int kx = 0; kx < kw; ++kx) {
                                 const int ix = ox * sw - pw0 + kx;
                                 if (ix < 0 || ix >= w) continue;
                                 if (in.requires_grad)
                                   grad_of(in).at(ci, iy, ix) +=
                                       g * wt.value.at(co, ci, ky, kx);
                                 if (wt.requires_grad)
                                   grad_of(wt).at(co, ci, ky, kx) +=
                                       g * in.value.at(ci, iy, ix);
                               }
                             }
                         }
                   });
}

// ---------------------------------------------------------------------------
// composite losses

// mean over rows of -log softmax(logits)[label]
inline Var cross_entropy_logits(const Var& logits, const std::vector<int>& labels) {
  KDSLU_CHECK(logits->value.rank() == 2 &&
                  logits->value.dim(0) == static_cast<int>(labels.size()),
              ErrorKind::ShapeError, "cross_entropy: label count mismatch");
  Var lsm = log_softmax_rows(logits);
  return neg(mean_all(pick_per_row(lsm, labels)));
}

// vector 1-norm of (a - b), summed over every element
inline Var l1_distance(const Var& a, const Var& b) { return sum(abs_val(sub(a, b))); }

inline Var mean_of(const std::vector<Var>& scalars) {
  KDSLU_CHECK(!scalars.empty(), ErrorKind::ShapeError, "mean_of: empty");
  Var acc = scalars[0];
  for (size_t i = 1; i < scalars.size(); ++i) acc = add(acc, scalars[i]);
  return scale(acc, 1.0 / static_cast<double>(scalars.size()));
}

}  // namespace kdslu

#endif  // KDSLU_AUTOGRAD_HPP
