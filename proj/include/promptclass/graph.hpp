#ifndef PROMPTCLASS_GRAPH_HPP
#define PROMPTCLASS_GRAPH_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "promptclass/errors.hpp"
#include "promptclass/kernels.hpp"
#include "promptclass/tensor.hpp"

namespace promptclass {

// Reverse-mode autodiff tape. Ops append nodes, so reverse tape order is a
// valid reverse-topological order and backward() is a single reverse sweep.
// Gradient accumulation order is fixed by the tape, which keeps training
// bitwise reproducible.
template <typename T>
class Graph {
 public:
  using Id = std::size_t;
  using BackFn = std::function<void(Graph&)>;

  Id leaf(Tensor<T> value, bool requires_grad = false) {
    return push(std::move(value), requires_grad, nullptr);
  }

  const Tensor<T>& value(Id id) const { return nodes_[id].value; }

  // Gradient of the last backward() target w.r.t. node id (zeros if the node
  // was never reached).
  Tensor<T> grad(Id id) const {
    const Node& n = nodes_[id];
    if (n.grad.size() == 0) return Tensor<T>::zeros_like(n.value);
    return n.grad;
  }

  std::size_t size() const { return nodes_.size(); }

  void backward(Id loss) {
    if (nodes_[loss].value.size() != 1)
      throw UsageError("backward target must be a scalar");
    ensure_grad(loss);
    nodes_[loss].grad.v[0] = T(1);
    for (std::size_t i = loss + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.back && n.grad.size() != 0) n.back(*this);
    }
  }

  void check_finite(Id id, const std::string& context) const {
    if (!nodes_[id].value.all_finite())
      throw NumericError("numeric overflow in " + context);
  }

  // ---- ops ----------------------------------------------------------

  // A[m x k] * B[k x n]
  Id matmul(Id a, Id b) {
    const Tensor<T>& A = val(a);
    const Tensor<T>& B = val(b);
    Tensor<T> out = Tensor<T>::mat(A.rows(), B.cols());
    kernels::mm<false>(out.data(), A.data(), B.data(), A.rows(), A.cols(), B.cols());
    bool req = needs_grad(a) || needs_grad(b);
    Id id = push(std::move(out), req, nullptr);
    if (req) {
      nodes_[id].back = [id, a, b](Graph& g) {
        const Tensor<T>& go = g.nodes_[id].grad;
        const Tensor<T>& A2 = g.val(a);
        const Tensor<T>& B2 = g.val(b);
        std::size_t m = A2.rows(), k = A2.cols(), n = B2.cols();
        if (g.needs_grad(a)) {
          g.ensure_grad(a);
          kernels::mm_nt<true>(g.nodes_[a].grad.data(), go.data(), B2.data(), m, n, k);
        }
        if (g.needs_grad(b)) {
          g.ensure_grad(b);
          kernels::mm_tn<true>(g.nodes_[b].grad.data(), A2.data(), go.data(), k, m, n);
        }
      };
    }
    return id;
  }

  // A[m x k] * B^T with B[n x k]
  Id matmul_nt(Id a, Id b) {
    const Tensor<T>& A = val(a);
    const Tensor<T>& B = val(b);
    Tensor<T> out = Tensor<T>::mat(A.rows(), B.rows());
    kernels::mm_nt<false>(out.data(), A.data(), B.data(), A.rows(), A.cols(), B.rows());
    bool req = needs_grad(a) || needs_grad(b);
    Id id = push(std::move(out), req, nullptr);
    if (req) {
      nodes_[id].back = [id, a, b](Graph& g) {
        const Tensor<T>& go = g.nodes_[id].grad;
        const Tensor<T>& A2 = g.val(a);
        const Tensor<T>& B2 = g.val(b);
        std::size_t m = A2.rows(), k = A2.cols(), n = B2.rows();
        if (g.needs_grad(a)) {
          g.ensure_grad(a);
          kernels::mm<true>(g.nodes_[a].grad.data(), go.data(), B2.data(), m, n, k);
        }
        if (g.needs_grad(b)) {
          g.ensure_grad(b);
          kernels::mm_tn<true>(g.nodes_[b].grad.data(), go.data(), A2.data(), n, m, k);
        }
      };
    }
    return id;
  }

  Id add(Id a, Id b) {
    const Tensor<T>& A = val(a);
    const Tensor<T>& B = val(b);
    Tensor<T> out = A;
    for (std::size_t i = 0; i < out.size(); ++i) out.v[i] += B.v[i];
    bool req = needs_grad(a) || needs_grad(b);
    Id id = push(std::move(out), req, nullptr);
    if (req) {
      nodes_[id].back = [id, a, b](Graph& g) {
        const Tensor<T>& go = g.nodes_[id].grad;
        for (Id p : {a, b}) {
          if (!g.needs_grad(p)) continue;
          g.ensure_grad(p);
          Tensor<T>& gp = g.nodes_[p].grad;
          for (std::size_t i = 0; i < gp.size(); ++i) gp.v[i] += go.v[i];
        }
      };
    }
    return id;
  }

  Id mul(Id a, Id b) {
    const Tensor<T>& A = val(a);
    const Tensor<T>& B = val(b);
    Tensor<T> out = A;
    for (std::size_t i = 0; i < out.size(); ++i) out.v[i] *= B.v[i];
    bool req = needs_grad(a) || needs_grad(b);
    Id id = push(std::move(out), req, nullptr);
    if (req) {
      nodes_[id].back = [id, a, b](Graph& g) {
        const Tensor<T>& go = g.nodes_[id].grad;
        if (g.needs_grad(a)) {
          g.ensure_grad(a);
          Tensor<T>& ga = g.nodes_[a].grad;
          const Tensor<T>& B2 = g.val(b);
          for (std::size_t i = 0; i < ga.size(); ++i) ga.v[i] += go.v[i] * B2.v[i];
        }
        if (g.needs_grad(b)) {
          g.ensure_grad(b);
          Tensor<T>& gb = g.nodes_[b].grad;
          const Tensor<T>& A2 = g.val(a);
          for (std::size_t i = 0; i < gb.size(); ++i) gb.v[i] += go.v[i] * A2.v[i];
        }
      };
    }
    return id;
  }

  Id scale(Id a, T c) {
    Tensor<T> out = val(a);
    for (auto& x : out.v) x *= c;
    bool req = needs_grad(a);
    Id id = push(std::move(out), req, nullptr);
    if (req) {
      nodes_[id].back = [id, a, c](Graph& g) {
        const Tensor<T>& go = g.nodes_[id].grad;
        g.ensure_grad(a);
        Tensor<T>& ga = g.nodes_[a].grad;
        for (std::size_t i = 0; i < ga.size(); ++i) ga.v[i] += go.v[i] * c;
      };
    }
    return id;
  }

  // X[m x n] + b[n] broadcast over rows
  Id add_row_broadcast(Id x, Id b) {
    const Tensor<T>& X = val(x);
    const Tensor<T>& B = val(b);
    Tensor<T> out = X;
    std::size_t m = X.rows(), n = X.cols();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out.v[i * n + j] += B.v[j];
    bool req = needs_grad(x) || needs_grad(b);
    Id id = push(std::move(out), req, nullptr);
    if (req) {
      nodes_[id].back = [id, x, b](Graph& g) {
        const Tensor<T>& go = g.nodes_[id].grad;
        std::size_t m = go.rows(), n = go.cols();
        if (g.needs_grad(x)) {
          g.ensure_grad(x);
          Tensor<T>& gx = g.nodes_[x].grad;
          for (std::size_t i = 0; i < gx.size(); ++i) gx.v[i] += go.v[i];
        }
        if (g.needs_grad(b)) {
          g.ensure_grad(b);
          Tensor<T>& gb = g.nodes_[b].grad;
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gb.v[j] += go.v[i * n + j];
        }
      };
    }
    return id;
  }

  // X[m x in] * W^T + b, W[out x in], b[out]
  Id linear(Id x, Id w, Id b) { return add_row_broadcast(matmul_nt(x, w), b); }

  // table[v x d] gathered at ids -> [n x d]
  Id gather_rows(Id table, std::vector<int> ids) {
    const Tensor<T>& Tb = val(table);
    std::size_t d = Tb.cols();
    for (int i : ids)
      if (i < 0 || static_cast<std::size_t>(i) >= Tb.rows())
        throw DataError("token id " + std::to_string(i) + " out of range for table of " +
                        std::to_string(Tb.rows()) + " rows");
    Tensor<T> out = Tensor<T>::mat(ids.size(), d);
    for (std::size_t i = 0; i < ids.size(); ++i)
      std::copy(Tb.row_ptr(ids[i]), Tb.row_ptr(ids[i]) + d, out.row_ptr(i));
    bool req = needs_grad(table);
    Id id = push(std::move(out), req, nullptr);
    if (req) {
      nodes_[id].back = [id, table, ids = std::move(ids)](Graph& g) {
        const Tensor<T>& go = g.nodes_[id].grad;
        g.ensure_grad(table);
        Tensor<T>& gt = g.nodes_[table].grad;
        std::size_t d = gt.cols();
        for (std::size_t i = 0; i < ids.size(); ++i) {
          const T* src = go.row_ptr(i);
          T* dst = gt.row_ptr(ids[i]);
          for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
        }
      };
    }
    return id;
  }

  // rows [r0, r1) of X -> [(r1-r0) x d]
  Id slice_rows(Id x, std::size_t r0, std::size_t r1) {
    const Tensor<T>& X = val(x);
    std::size_t d = X.cols();
    Tensor<T> out = Tensor<T>::mat(r1 - r0, d);
    std::copy(X.row_ptr(r0), X.row_ptr(r0) + (r1 - r0) * d, out.data());
    bool req = needs_grad(x);
    Id id = push(std::move(out), req, nullptr);
    if (req) {
      nodes_[id].back = [id, x, r0](Graph& g) {
        const Tensor<T>& go = g.nodes_[id].grad;
        g.ensure_grad(x);
        Tensor<T>& gx = g.nodes_[x].grad;
        std::size_t d = gx.cols();
        T* dst = gx.row_ptr(r0);
        for (std::size_t i = 0; i < go.size(); ++i) dst[i] += go.v[i];
        (void)d;
      };
    }
    return id;
  }

  // row r of X -> rank-1 [d]
  Id row(Id x, std::size_t r) {
    const Tensor<T>& X = val(x);
    std::size_t d = X.cols();
    Tensor<T> out = Tensor<T>::vec(d);
    std::copy(X.row_ptr(r), X.row_ptr(r) + d, out.data());
    bool req = needs_grad(x);
    Id id = push(std::move(out), req, nullptr);
    if (req) {
      nodes_[id].back = [id, x, r](Graph& g) {
        const Tensor<T>& go = g.nodes_[id].grad;
        g.ensure_grad(x);
        Tensor<T>& gx = g.nodes_[x].grad;
        T* dst = gx.row_ptr(r);
        for (std::size_t j = 0; j < go.size(); ++j) dst[j] += go.v[j];
      };
    }
    return id;
  }

  // stack rank-1 vectors (all length d) into [k x d]
  Id stack_rows(const std::vector<Id>& parts) {
    std::size_t d = val(parts[0]).size();
    Tensor<T> out = Tensor<T>::mat(parts.size(), d);
    bool req = false;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      const Tensor<T>& P = val(parts[i]);
      std::copy(P.data(), P.data() + d, out.row_ptr(i));
      req = req || needs_grad(parts[i]);
    }
    Id id = push(std::move(out), req, nullptr);
    if (req) {
      nodes_[id].back = [id, parts](Graph& g) {
        const Tensor<T>& go = g.nodes_[id].grad;
        std::size_t d = go.cols();
        for (std::size_t i = 0; i < parts.size(); ++i) {
          if (!g.needs_grad(parts[i])) continue;
          g.ensure_grad(parts[i]);
          Tensor<T>& gp = g.nodes_[parts[i]].grad;
          const T* src = go.row_ptr(i);
          for (std::size_t j = 0; j < d; ++j) gp.v[j] += src[j];
        }
      };
    }
    return id;
  }

  // columns [c0, c1) of X
  Id slice_cols(Id x, std::size_t c0, std::size_t c1) {
    const Tensor<T>& X = val(x);
    std::size_t m = X.rows(), n = X.cols(), w = c1 - c0;
    Tensor<T> out = Tensor<T>::mat(m, w);
    for (std::size_t i = 0; i < m; ++i)
      std::copy(X.row_ptr(i) + c0, X.row_ptr(i) + c1, out.row_ptr(i));
    bool req = needs_grad(x);
    Id id = push(std::move(out), req, nullptr);
    if (req) {
      nodes_[id].back = [id, x, c0, w, n](Graph& g) {
        const Tensor<T>& go = g.nodes_[id].grad;
        g.ensure_grad(x);
        Tensor<T>& gx = g.nodes_[x].grad;
        std::size_t m = go.rows();
        for (std::size_t i = 0; i < m; ++i) {
          const T* src = go.row_ptr(i);
          T* dst = gx.data() + i * n + c0;
          for (std::size_t j = 0; j < w; ++j) dst[j] += src[j];
        }
      };
    }
    return id;
  }

  Id concat_cols(const std::vector<Id>& parts) {
    std::size_t m = val(parts[0]).rows();
    std::size_t total = 0;
    bool req = false;
    for (Id p : parts) {
      total += val(p).cols();
      req = req || needs_grad(p);
    }
    Tensor<T> out = Tensor<T>::mat(m, total);
    std::size_t off = 0;
    for (Id p : parts) {
      const Tensor<T>& P = val(p);
      for (std::size_t i = 0; i < m; ++i)
        std::copy(P.row_ptr(i), P.row_ptr(i) + P.cols(), out.row_ptr(i) + off);
      off += P.cols();
    }
    Id id = push(std::move(out), req, nullptr);
    if (req) {
      nodes_[id].back = [id, parts](Graph& g) {
        const Tensor<T>& go = g.nodes_[id].grad;
        std::size_t m = go.rows();
        std::size_t off = 0;
        for (Id p : parts) {
          std::size_t w = g.val(p).cols();
          if (g.needs_grad(p)) {
            g.ensure_grad(p);
            Tensor<T>& gp = g.nodes_[p].grad;
            for (std::size_t i = 0; i < m; ++i) {
              const T* src = go.row_ptr(i) + off;
              T* dst = gp.row_ptr(i);
              for (std::size_t j = 0; j < w; ++j) dst[j] += src[j];
            }
          }
          off += w;
        }
      };
    }
    return id;
  }

  // rank-1 slice [a, b)
  Id slice_vec(Id x, std::size_t a, std::size_t b) {
    const Tensor<T>& X = val(x);
    Tensor<T> out = Tensor<T>::vec(b - a);
    std::copy(X.data() + a, X.data() + b, out.data());
    bool req = needs_grad(x);
    Id id = push(std::move(out), req, nullptr);
    if (req) {
      nodes_[id].back = [id, x, a](Graph& g) {
        const Tensor<T>& go = g.nodes_[id].grad;
        g.ensure_grad(x);
        Tensor<T>& gx = g.nodes_[x].grad;
        for (std::size_t j = 0; j < go.size(); ++j) gx.v[a + j] += go.v[j];
      };
    }
    return id;
  }

  Id concat_vecs(const std::vector<Id>& parts) {
    std::size_t total = 0;
    bool req = false;
    for (Id p : parts) {
      total += val(p).size();
      req = req || needs_grad(p);
    }
    Tensor<T> out = Tensor<T>::vec(total);
    std::size_t off = 0;
    for (Id p : parts) {
      const Tensor<T>& P = val(p);
      std::copy(P.data(), P.data() + P.size(), out.data() + off);
      off += P.size();
    }
    Id id = push(std::move(out), req, nullptr);
    if (req) {
      nodes_[id].back = [id, parts](Graph& g) {
        const Tensor<T>& go = g.nodes_[id].grad;
        std::size_t off = 0;
        for (Id p : parts) {
          std::size_t n = g.val(p).size();
          if (g.needs_grad(p)) {
            g.ensure_grad(p);
            Tensor<T>& gp = g.nodes_[p].grad;
            for (std::size_t j = 0; j < n; ++j) gp.v[j] += go.v[off + j];
          }
          off += n;
        }
      };
    }
    return id;
  }

  Id layer_norm(Id x, Id gamma, Id beta, T eps) {
    const Tensor<T>& X = val(x);
    const Tensor<T>& G = val(gamma);
    const Tensor<T>& B = val(beta);
    std::size_t m = X.rows(), d = X.cols();
    Tensor<T> out = Tensor<T>::mat(m, d);
    auto xhat = std::make_shared<Tensor<T>>(Tensor<T>::mat(m, d));
    auto rstd = std::make_shared<Tensor<T>>(Tensor<T>::vec(m));
    for (std::size_t i = 0; i < m; ++i)
      kernels::layernorm_row(X.row_ptr(i), G.data(), B.data(), d, eps, out.row_ptr(i),
                             xhat->row_ptr(i), &rstd->v[i]);
    if (X.rank() == 1) out.dims = {d};
    bool req = needs_grad(x) || needs_grad(gamma) || needs_grad(beta);
    Id id = push(std::move(out), req, nullptr);
    if (req) {
      nodes_[id].back = [id, x, gamma, beta, xhat, rstd](Graph& g) {
        const Tensor<T>& go = g.nodes_[id].grad;
        std::size_t m = xhat->rows(), d = xhat->cols();
        const Tensor<T>& G = g.val(gamma);
        for (std::size_t i = 0; i < m; ++i) {
          const T* dy = go.data() + i * d;
          const T* xh = xhat->row_ptr(i);
          if (g.needs_grad(gamma)) {
            g.ensure_grad(gamma);
            Tensor<T>& gg = g.nodes_[gamma].grad;
            for (std::size_t j = 0; j < d; ++j) gg.v[j] += dy[j] * xh[j];
          }
          if (g.needs_grad(beta)) {
            g.ensure_grad(beta);
            Tensor<T>& gb = g.nodes_[beta].grad;
            for (std::size_t j = 0; j < d; ++j) gb.v[j] += dy[j];
          }
          if (g.needs_grad(x)) {
            g.ensure_grad(x);
            Tensor<T>& gx = g.nodes_[x].grad;
            T mean_dxhat = T(0), mean_dxhat_xhat = T(0);
            // dxhat = dy * gamma
            for (std::size_t j = 0; j < d; ++j) {
              T dxh = dy[j] * G.v[j];
              mean_dxhat += dxh;
              mean_dxhat_xhat += dxh * xh[j];
            }
            mean_dxhat /= static_cast<T>(d);
            mean_dxhat_xhat /= static_cast<T>(d);
            T r = rstd->v[i];
            T* dst = gx.data() + i * d;
            for (std::size_t j = 0; j < d; ++j) {
              T dxh = dy[j] * G.v[j];
              dst[j] += r * (dxh - mean_dxhat - xh[j] * mean_dxhat_xhat);
            }
          }
        }
      };
    }
    return id;
  }

  Id tanh_(Id x) {
    Tensor<T> out = val(x);
    for (auto& e : out.v) e = std::tanh(e);
    return elementwise_with_output(x, std::move(out),
                                   [](T /*in*/, T y) { return T(1) - y * y; });
  }

  Id sigmoid_(Id x) {
    Tensor<T> out = val(x);
    for (auto& e : out.v) e = kernels::sigmoid(e);
    return elementwise_with_output(x, std::move(out),
                                   [](T /*in*/, T y) { return y * (T(1) - y); });
  }

  Id relu_(Id x) {
    Tensor<T> out = val(x);
    for (auto& e : out.v) e = e > T(0) ? e : T(0);
    return elementwise_with_input(x, std::move(out),
                                  [](T in, T /*y*/) { return in > T(0) ? T(1) : T(0); });
  }

  Id gelu_(Id x) {
    Tensor<T> out = val(x);
    for (auto& e : out.v) e = kernels::gelu(e);
    return elementwise_with_input(x, std::move(out),
                                  [](T in, T /*y*/) { return kernels::gelu_grad(in); });
  }

  // scale * X, row-wise masked softmax; columns >= valid get probability 0.
  Id softmax_rows_masked(Id x, std::size_t valid, T scale) {
    Tensor<T> out = val(x);
    std::size_t m = out.rows(), n = out.cols();
    for (std::size_t i = 0; i < m; ++i) {
      T* r = out.row_ptr(i);
      for (std::size_t j = 0; j < n; ++j) r[j] *= scale;
      kernels::softmax_masked(r, n, valid);
    }
    bool req = needs_grad(x);
    Id id = push(std::move(out), req, nullptr);
    if (req) {
      nodes_[id].back = [id, x, valid, scale](Graph& g) {
        const Tensor<T>& go = g.nodes_[id].grad;
        const Tensor<T>& alpha = g.nodes_[id].value;
        g.ensure_grad(x);
        Tensor<T>& gx = g.nodes_[x].grad;
        std::size_t m = alpha.rows(), n = alpha.cols();
        std::size_t v = (valid == 0 || valid > n) ? n : valid;
        for (std::size_t i = 0; i < m; ++i) {
          const T* a = alpha.row_ptr(i);
          const T* dy = go.row_ptr(i);
          T dot = T(0);
          for (std::size_t j = 0; j < v; ++j) dot += dy[j] * a[j];
          T* dst = gx.row_ptr(i);
          for (std::size_t j = 0; j < v; ++j) dst[j] += scale * a[j] * (dy[j] - dot);
        }
      };
    }
    return id;
  }

  Id softmax_vec(Id x) {
    Tensor<T> out = val(x);
    kernels::softmax(out.data(), out.size());
    bool req = needs_grad(x);
    Id id = push(std::move(out), req, nullptr);
    if (req) {
      nodes_[id].back = [id, x](Graph& g) {
        const Tensor<T>& go = g.nodes_[id].grad;
        const Tensor<T>& a = g.nodes_[id].value;
        g.ensure_grad(x);
        Tensor<T>& gx = g.nodes_[x].grad;
        T dot = T(0);
        for (std::size_t j = 0; j < a.size(); ++j) dot += go.v[j] * a.v[j];
        for (std::size_t j = 0; j < a.size(); ++j) gx.v[j] += a.v[j] * (go.v[j] - dot);
      };
    }
    return id;
  }

  // M[r x c] * v[c] -> [r]
  Id matvec(Id m, Id vv) {
    const Tensor<T>& M = val(m);
    const Tensor<T>& V = val(vv);
    std::size_t r = M.rows(), c = M.cols();
    Tensor<T> out = Tensor<T>::vec(r);
    for (std::size_t i = 0; i < r; ++i) {
      const T* mi = M.row_ptr(i);
      T s = T(0);
      for (std::size_t j = 0; j < c; ++j) s += mi[j] * V.v[j];
      out.v[i] = s;
    }
    bool req = needs_grad(m) || needs_grad(vv);
    Id id = push(std::move(out), req, nullptr);
    if (req) {
      nodes_[id].back = [id, m, vv](Graph& g) {
        const Tensor<T>& go = g.nodes_[id].grad;
        const Tensor<T>& M2 = g.val(m);
        const Tensor<T>& V2 = g.val(vv);
        std::size_t r = M2.rows(), c = M2.cols();
        if (g.needs_grad(m)) {
          g.ensure_grad(m);
          Tensor<T>& gm = g.nodes_[m].grad;
          for (std::size_t i = 0; i < r; ++i) {
            T* dst = gm.data() + i * c;
            for (std::size_t j = 0; j < c; ++j) dst[j] += go.v[i] * V2.v[j];
          }
        }
        if (g.needs_grad(vv)) {
          g.ensure_grad(vv);
          Tensor<T>& gv = g.nodes_[vv].grad;
          for (std::size_t i = 0; i < r; ++i) {
            const T* mi = M2.row_ptr(i);
            for (std::size_t j = 0; j < c; ++j) gv.v[j] += go.v[i] * mi[j];
          }
        }
      };
    }
    return id;
  }

  // sum_i alphas[i] * rows[i] -> [d]
  Id weighted_sum_rows(Id alphas, Id rowsm) {
    const Tensor<T>& A = val(alphas);
    const Tensor<T>& R = val(rowsm);
    std::size_t k = R.rows(), d = R.cols();
    Tensor<T> out = Tensor<T>::vec(d);
    for (std::size_t i = 0; i < k; ++i) {
      const T* ri = R.row_ptr(i);
      T ai = A.v[i];
      for (std::size_t j = 0; j < d; ++j) out.v[j] += ai * ri[j];
    }
    bool req = needs_grad(alphas) || needs_grad(rowsm);
    Id id = push(std::move(out), req, nullptr);
    if (req) {
      nodes_[id].back = [id, alphas, rowsm](Graph& g) {
        const Tensor<T>& go = g.nodes_[id].grad;
        const Tensor<T>& A2 = g.val(alphas);
        const Tensor<T>& R2 = g.val(rowsm);
        std::size_t k = R2.rows(), d = R2.cols();
        if (g.needs_grad(alphas)) {
          g.ensure_grad(alphas);
          Tensor<T>& ga = g.nodes_[alphas].grad;
          for (std::size_t i = 0; i < k; ++i) {
            const T* ri = R2.row_ptr(i);
            T s = T(0);
            for (std::size_t j = 0; j < d; ++j) s += go.v[j] * ri[j];
            ga.v[i] += s;
          }
        }
        if (g.needs_grad(rowsm)) {
          g.ensure_grad(rowsm);
          Tensor<T>& gr = g.nodes_[rowsm].grad;
          for (std::size_t i = 0; i < k; ++i) {
            T* dst = gr.row_ptr(i);
            T ai = A2.v[i];
            for (std::size_t j = 0; j < d; ++j) dst[j] += ai * go.v[j];
          }
        }
      };
    }
    return id;
  }

  Id mean_rows(Id x) {
    const Tensor<T>& X = val(x);
    std::size_t m = X.rows(), d = X.cols();
    Tensor<T> out = Tensor<T>::vec(d);
    for (std::size_t i = 0; i < m; ++i) {
      const T* r = X.row_ptr(i);
      for (std::size_t j = 0; j < d; ++j) out.v[j] += r[j];
    }
    for (std::size_t j = 0; j < d; ++j) out.v[j] /= static_cast<T>(m);
    bool req = needs_grad(x);
    Id id = push(std::move(out), req, nullptr);
    if (req) {
      nodes_[id].back = [id, x, m](Graph& g) {
        const Tensor<T>& go = g.nodes_[id].grad;
        g.ensure_grad(x);
        Tensor<T>& gx = g.nodes_[x].grad;
        std::size_t d = go.size();
        T inv = T(1) / static_cast<T>(m);
        for (std::size_t i = 0; i < m; ++i) {
          T* dst = gx.data() + i * d;
          for (std::size_t j = 0; j < d; ++j) dst[j] += go.v[j] * inv;
        }
      };
    }
    return id;
  }

  Id sum_all(Id x) {
    const Tensor<T>& X = val(x);
    Tensor<T> out = Tensor<T>::vec(1);
    for (const T& e : X.v) out.v[0] += e;
    bool req = needs_grad(x);
    Id id = push(std::move(out), req, nullptr);
    if (req) {
      nodes_[id].back = [id, x](Graph& g) {
        const T go = g.nodes_[id].grad.v[0];
        g.ensure_grad(x);
        for (auto& e : g.nodes_[x].grad.v) e += go;
      };
    }
    return id;
  }

  // softmax cross-entropy on a rank-1 logit vector against one target index.
  Id cross_entropy_logits(Id logits, std::size_t target) {
    const Tensor<T>& L = val(logits);
    if (target >= L.size()) throw UsageError("cross-entropy target out of range");
    T lse = kernels::logsumexp(L.data(), L.size());
    Tensor<T> out = Tensor<T>::vec(1);
    out.v[0] = lse - L.v[target];
    bool req = needs_grad(logits);
    // probs must be copied before push(): the node vector may reallocate and
    // invalidate L
    std::shared_ptr<Tensor<T>> probs;
    if (req) {
      probs = std::make_shared<Tensor<T>>(L);
      kernels::softmax(probs->data(), probs->size());
    }
    Id id = push(std::move(out), req, nullptr);
    if (req) {
      nodes_[id].back = [id, logits, target, probs](Graph& g) {
        const T go = g.nodes_[id].grad.v[0];
        g.ensure_grad(logits);
        Tensor<T>& gl = g.nodes_[logits].grad;
        for (std::size_t j = 0; j < gl.size(); ++j) {
          T p = probs->v[j];
          gl.v[j] += go * (p - (j == target ? T(1) : T(0)));
        }
      };
    }
    return id;
  }

  Id mean_of(const std::vector<Id>& scalars) {
    Tensor<T> out = Tensor<T>::vec(1);
    bool req = false;
    for (Id s : scalars) {
      out.v[0] += val(s).v[0];
      req = req || needs_grad(s);
    }
    out.v[0] /= static_cast<T>(scalars.size());
    Id id = push(std::move(out), req, nullptr);
    if (req) {
      nodes_[id].back = [id, scalars](Graph& g) {
        const T go = g.nodes_[id].grad.v[0] / static_cast<T>(scalars.size());
        for (Id s : scalars) {
          if (!g.needs_grad(s)) continue;
          g.ensure_grad(s);
          g.nodes_[s].grad.v[0] += go;
        }
      };
    }
    return id;
  }

  bool needs_grad(Id id) const { return nodes_[id].requires_grad; }

  void ensure_grad(Id id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) n.grad = Tensor<T>::zeros_like(n.value);
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // empty until touched by backward
    BackFn back;
    bool requires_grad = false;
  };

  const Tensor<T>& val(Id id) const { return nodes_[id].value; }

  Id push(Tensor<T> value, bool req, BackFn back) {
    nodes_.push_back(Node{std::move(value), Tensor<T>{}, std::move(back), req});
    return nodes_.size() - 1;
  }

  template <typename DFn>
  Id elementwise_with_output(Id x, Tensor<T> out, DFn dfn) {
    bool req = needs_grad(x);
    Id id = push(std::move(out), req, nullptr);
    if (req) {
      nodes_[id].back = [id, x, dfn](Graph& g) {
        const Tensor<T>& go = g.nodes_[id].grad;
        const Tensor<T>& y = g.nodes_[id].value;
        g.ensure_grad(x);
        Tensor<T>& gx = g.nodes_[x].grad;
        for (std::size_t i = 0; i < gx.size(); ++i) gx.v[i] += go.v[i] * dfn(T(0), y.v[i]);
      };
    }
    return id;
  }

  template <typename DFn>
  Id elementwise_with_input(Id x, Tensor<T> out, DFn dfn) {
    bool req = needs_grad(x);
    Id id = push(std::move(out), req, nullptr);
    if (req) {
      nodes_[id].back = [id, x, dfn](Graph& g) {
        const Tensor<T>& go = g.nodes_[id].grad;
        const Tensor<T>& in = g.nodes_[x].value;
        g.ensure_grad(x);
        Tensor<T>& gx = g.nodes_[x].grad;
        for (std::size_t i = 0; i < gx.size(); ++i) gx.v[i] += go.v[i] * dfn(in.v[i], T(0));
      };
    }
    return id;
  }

  std::vector<Node> nodes_;
};

}  // namespace promptclass

#endif  // PROMPTCLASS_GRAPH_HPP
