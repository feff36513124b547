/* Copyright 2026 The skillneo Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "skillneo/errors.hpp"
#include "skillneo/model.hpp"

namespace skillneo::model {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using MutMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;

// Row-major C = alpha * op(A) op(B) + beta * C, BLAS argument conventions.
template <typename T>
void gemm(bool ta, bool tb, int m, int n, int k, T alpha, const T* a, int lda,
          const T* b, int ldb, T beta, T* c, int ldc) {
  ConstMap<T> A(a, ta ? k : m, ta ? m : k, Eigen::OuterStride<>(lda));
  ConstMap<T> B(b, tb ? n : k, tb ? k : n, Eigen::OuterStride<>(ldb));
  MutMap<T> C(c, m, n, Eigen::OuterStride<>(ldc));
  if (beta == T(0)) {
    C.setZero();
  } else if (beta != T(1)) {
    C *= beta;
  }
  if (!ta && !tb) {
    C.noalias() += alpha * (A * B);
  } else if (!ta && tb) {
    C.noalias() += alpha * (A * B.transpose());
  } else if (ta && !tb) {
    C.noalias() += alpha * (A.transpose() * B);
  } else {
    C.noalias() += alpha * (A.transpose() * B.transpose());
  }
}

constexpr double kLnEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)

template <typename T>
struct LinearRef {
  const T* w = nullptr;
  const T* b = nullptr;
  int in = 0;
  int out = 0;
  const T* lora_a = nullptr;  // out x r
  const T* lora_b = nullptr;  // r x in
  int rank = 0;
  T scale = 0;
};

template <typename T>
struct LinearGrad {
  T* w = nullptr;
  T* b = nullptr;
  T* lora_a = nullptr;
  T* lora_b = nullptr;
};

template <typename T>
struct LayerCache {
  std::vector<T> x_in, xhat1, rstd1, h1, q, k, v, xb_q, xb_k, xb_v, probs, att,
      xb_o, x_mid, xhat2, rstd2, h2, xb_up, u, g, xb_down;
};

}  // namespace

template <typename T>
struct Engine<T>::Impl {
  std::vector<LayerCache<T>> layers;
  std::vector<T> x_out, xhatf, rstdf, hf, logits;
  // Scratch for backward.
  std::vector<T> dx, dtmp, dh, datt, dq, dk, dv, dffn, dxb, dlogits;
  int n = 0, batch = 0, seq = 0;
};

template <typename T>
Engine<T>::Engine(const ModelConfig& config)
    : config_(config), impl_(std::make_unique<Impl>()) {
  config_.validate();
  impl_->layers.resize(static_cast<std::size_t>(config_.n_layers));
}

template <typename T>
Engine<T>::~Engine() = default;

namespace {

template <typename T>
LinearRef<T> linear_ref(const ViewT<T>& view, const ModelConfig& c, int l,
                        LinearSlot slot) {
  const auto& p = *view.base;
  const int wi = Layout::weight_of(l, slot);
  LinearRef<T> r;
  r.w = p[wi].data.data();
  r.b = p[wi + 1].data.data();
  r.out = p[wi].rows();
  r.in = p[wi].cols();
  (void)c;
  if (view.low_rank) {
    r.lora_a = view.low_rank->a(l, slot).data.data();
    r.lora_b = view.low_rank->b(l, slot).data.data();
    r.rank = view.low_rank->rank;
    r.scale = view.low_rank->scale();
  }
  return r;
}

template <typename T>
LinearGrad<T> linear_grad(const GradsT<T>& g, int l, LinearSlot slot) {
  LinearGrad<T> r;
  if (g.base) {
    const int wi = Layout::weight_of(l, slot);
    r.w = (*g.base)[wi].data.data();
    r.b = (*g.base)[wi + 1].data.data();
  }
  if (g.low_rank) {
    const int fi = 2 * (l * kLinearSlots + static_cast<int>(slot));
    r.lora_a = (*g.low_rank)[fi].data.data();
    r.lora_b = (*g.low_rank)[fi + 1].data.data();
  }
  return r;
}

template <typename T>
void linear_forward(const LinearRef<T>& L, int n, const T* x, T* y,
                    std::vector<T>& xb) {
  gemm(false, true, n, L.out, L.in, T(1), x, L.in, L.w, L.in, T(0), y, L.out);
  for (int i = 0; i < n; ++i) {
    T* row = y + static_cast<std::size_t>(i) * L.out;
    for (int j = 0; j < L.out; ++j) row[j] += L.b[j];
  }
  if (L.lora_a) {
    xb.resize(static_cast<std::size_t>(n) * L.rank);
    gemm(false, true, n, L.rank, L.in, T(1), x, L.in, L.lora_b, L.in, T(0),
         xb.data(), L.rank);
    gemm(false, true, n, L.out, L.rank, L.scale, xb.data(), L.rank, L.lora_a,
         L.rank, T(1), y, L.out);
  }
}

// dx = dy W (+ lora path); weight grads accumulate into non-null sinks.
// `accumulate_dx` adds into dx instead of overwriting it.
template <typename T>
void linear_backward(const LinearRef<T>& L, const LinearGrad<T>& G, int n,
                     const T* x, const std::vector<T>& xb, const T* dy, T* dx,
                     bool accumulate_dx, std::vector<T>& scratch) {
  gemm(false, false, n, L.in, L.out, T(1), dy, L.out, L.w, L.in,
       accumulate_dx ? T(1) : T(0), dx, L.in);
  if (G.w) {
    gemm(true, false, L.out, L.in, n, T(1), dy, L.out, x, L.in, T(1), G.w, L.in);
    for (int i = 0; i < n; ++i) {
      const T* row = dy + static_cast<std::size_t>(i) * L.out;
      for (int j = 0; j < L.out; ++j) G.b[j] += row[j];
    }
  }
  if (L.lora_a) {
    scratch.resize(static_cast<std::size_t>(n) * L.rank);
    gemm(false, false, n, L.rank, L.out, T(1), dy, L.out, L.lora_a, L.rank,
         T(0), scratch.data(), L.rank);
    gemm(false, false, n, L.in, L.rank, L.scale, scratch.data(), L.rank,
         L.lora_b, L.in, T(1), dx, L.in);
    if (G.lora_a) {
      gemm(true, false, L.out, L.rank, n, L.scale, dy, L.out, xb.data(), L.rank,
           T(1), G.lora_a, L.rank);
      gemm(true, false, L.rank, L.in, n, L.scale, scratch.data(), L.rank, x,
           L.in, T(1), G.lora_b, L.in);
    }
  }
}

template <typename T>
void layer_norm_forward(int n, int d, const T* x, const T* g, const T* b,
                        T* xhat, T* rstd, T* y) {
  for (int i = 0; i < n; ++i) {
    const T* xi = x + static_cast<std::size_t>(i) * d;
    T mean = 0;
    for (int j = 0; j < d; ++j) mean += xi[j];
    mean /= d;
    T var = 0;
    for (int j = 0; j < d; ++j) var += (xi[j] - mean) * (xi[j] - mean);
    var /= d;
    const T rs = T(1) / std::sqrt(var + T(kLnEps));
    rstd[i] = rs;
    T* xh = xhat + static_cast<std::size_t>(i) * d;
    T* yi = y + static_cast<std::size_t>(i) * d;
    for (int j = 0; j < d; ++j) {
      xh[j] = (xi[j] - mean) * rs;
      yi[j] = xh[j] * g[j] + b[j];
    }
  }
}

// dx (+)= LN backward of dy; dg/db accumulate when non-null.
template <typename T>
void layer_norm_backward(int n, int d, const T* xhat, const T* rstd, const T* g,
                         const T* dy, T* dx, T* dg, T* db) {
  for (int i = 0; i < n; ++i) {
    const T* xh = xhat + static_cast<std::size_t>(i) * d;
    const T* dyi = dy + static_cast<std::size_t>(i) * d;
    T* dxi = dx + static_cast<std::size_t>(i) * d;
    T mean_dyg = 0, mean_dyg_xh = 0;
    for (int j = 0; j < d; ++j) {
      const T dyg = dyi[j] * g[j];
      mean_dyg += dyg;
      mean_dyg_xh += dyg * xh[j];
    }
    mean_dyg /= d;
    mean_dyg_xh /= d;
    for (int j = 0; j < d; ++j) {
      dxi[j] += rstd[i] * (dyi[j] * g[j] - mean_dyg - xh[j] * mean_dyg_xh);
    }
    if (dg) {
      for (int j = 0; j < d; ++j) {
        dg[j] += dyi[j] * xh[j];
        db[j] += dyi[j];
      }
    }
  }
}

// Causal scaled dot-product attention, one (sequence, head) block at a time.
// q, k, v, out are [batch * seq, heads * dh]; probs is [batch, heads, seq, seq]
// with zeros above the diagonal.
template <typename T>
void attention_forward(int batch, int seq, int heads, int dh, const T* q,
                       const T* k, const T* v, T* probs, T* out) {
  const int d = heads * dh;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  for (int b = 0; b < batch; ++b) {
    for (int h = 0; h < heads; ++h) {
      const std::size_t base = static_cast<std::size_t>(b) * seq * d + h * dh;
      ConstMap<T> Q(q + base, seq, dh, Eigen::OuterStride<>(d));
      ConstMap<T> K(k + base, seq, dh, Eigen::OuterStride<>(d));
      ConstMap<T> Vm(v + base, seq, dh, Eigen::OuterStride<>(d));
      MutMap<T> O(out + base, seq, dh, Eigen::OuterStride<>(d));
      MutMap<T> P(probs + (static_cast<std::size_t>(b) * heads + h) * seq * seq,
                  seq, seq, Eigen::OuterStride<>(seq));
      P.noalias() = scale * (Q * K.transpose());
      for (int i = 0; i < seq; ++i) {
        T* pi = P.data() + static_cast<std::size_t>(i) * seq;
        T mx = pi[0];
        for (int j = 1; j <= i; ++j) mx = std::max(mx, pi[j]);
        T sum = 0;
        for (int j = 0; j <= i; ++j) {
          pi[j] = std::exp(pi[j] - mx);
          sum += pi[j];
        }
        const T inv = T(1) / sum;
        for (int j = 0; j <= i; ++j) pi[j] *= inv;
        for (int j = i + 1; j < seq; ++j) pi[j] = 0;
      }
      O.noalias() = P * Vm;
    }
  }
}

template <typename T>
void attention_backward(int batch, int seq, int heads, int dh, const T* q,
                        const T* k, const T* v, const T* probs, const T* dout,
                        T* dq, T* dk, T* dv, std::vector<T>& scratch) {
  const int d = heads * dh;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  scratch.resize(static_cast<std::size_t>(seq) * seq);
  for (int b = 0; b < batch; ++b) {
    for (int h = 0; h < heads; ++h) {
      const std::size_t base = static_cast<std::size_t>(b) * seq * d + h * dh;
      ConstMap<T> Q(q + base, seq, dh, Eigen::OuterStride<>(d));
      ConstMap<T> K(k + base, seq, dh, Eigen::OuterStride<>(d));
      ConstMap<T> Vm(v + base, seq, dh, Eigen::OuterStride<>(d));
      ConstMap<T> dO(dout + base, seq, dh, Eigen::OuterStride<>(d));
      MutMap<T> dQ(dq + base, seq, dh, Eigen::OuterStride<>(d));
      MutMap<T> dK(dk + base, seq, dh, Eigen::OuterStride<>(d));
      MutMap<T> dV(dv + base, seq, dh, Eigen::OuterStride<>(d));
      ConstMap<T> P(probs + (static_cast<std::size_t>(b) * heads + h) * seq * seq,
                    seq, seq, Eigen::OuterStride<>(seq));
      MutMap<T> dS(scratch.data(), seq, seq, Eigen::OuterStride<>(seq));
      dV.noalias() = P.transpose() * dO;
      dS.noalias() = dO * Vm.transpose();
      for (int i = 0; i < seq; ++i) {
        const T* pi = P.data() + static_cast<std::size_t>(i) * seq;
        T* di = dS.data() + static_cast<std::size_t>(i) * seq;
        T dot = 0;
        for (int j = 0; j <= i; ++j) dot += di[j] * pi[j];
        for (int j = 0; j <= i; ++j) di[j] = pi[j] * (di[j] - dot) * scale;
        for (int j = i + 1; j < seq; ++j) di[j] = 0;
      }
      dQ.noalias() = dS * K;
      dK.noalias() = dS.transpose() * Q;
    }
  }
}

// Tanh-approximated GELU over a flat buffer.
template <typename T>
void gelu_forward(const T* u, T* g, std::size_t n) {
  using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
  Eigen::Map<const Arr> U(u, static_cast<Eigen::Index>(n));
  Eigen::Map<Arr> G(g, static_cast<Eigen::Index>(n));
  const T c = static_cast<T>(kGeluC);
  G = T(0.5) * U * (T(1) + (c * (U + T(0.044715) * U.cube())).tanh());
}

// du *= gelu'(u)
template <typename T>
void gelu_backward(const T* u, T* du, std::size_t n) {
  using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
  Eigen::Map<const Arr> U(u, static_cast<Eigen::Index>(n));
  Eigen::Map<Arr> D(du, static_cast<Eigen::Index>(n));
  const T c = static_cast<T>(kGeluC);
  const Arr t = (c * (U + T(0.044715) * U.cube())).tanh();
  D *= T(0.5) * (T(1) + t) +
       T(0.5) * U * (T(1) - t.square()) * c * (T(1) + T(3 * 0.044715) * U.square());
}

template <typename T>
void check_batch(const ModelConfig& c, const ViewT<T>& view, const Batch& b) {
  if (!view.base) throw InputError("view has no base parameters");
  if (b.batch <= 0 || b.seq <= 0) throw InputError("empty batch");
  if (b.seq > c.context_len) {
    throw InputError("sequence length " + std::to_string(b.seq) +
                     " exceeds context " + std::to_string(c.context_len));
  }
  const std::size_t n = static_cast<std::size_t>(b.batch) * b.seq;
  if (b.ids.size() != n || b.targets.size() != n) {
    throw InputError("batch ids/targets size mismatch");
  }
  const int ext_rows = view.extension ? view.extension->rows() : 0;
  for (int id : b.ids) {
    if (id < 0 || id >= c.vocab_size + ext_rows) {
      throw InputError("token id " + std::to_string(id) + " out of range");
    }
  }
}

}  // namespace

template <typename T>
const std::vector<T>& Engine<T>::forward(const ViewT<T>& view,
                                         const Batch& batch) {
  check_batch(config_, view, batch);
  const auto& p = *view.base;
  const ModelConfig& c = config_;
  const int d = c.d_model, F = c.ffn_width, V = c.vocab_size;
  const int n = batch.batch * batch.seq;
  const std::size_t nd = static_cast<std::size_t>(n) * d;
  Impl& m = *impl_;
  m.n = n;
  m.batch = batch.batch;
  m.seq = batch.seq;

  std::vector<T> x(nd);
  for (int i = 0; i < n; ++i) {
    const int id = batch.ids[static_cast<std::size_t>(i)];
    const int pos = i % batch.seq;
    const T* e = id < V ? p[Layout::kTokEmb].row(id)
                        : view.extension->row(id - V);
    const T* pe = p[Layout::kPosEmb].row(pos);
    T* xi = x.data() + static_cast<std::size_t>(i) * d;
    for (int j = 0; j < d; ++j) xi[j] = e[j] + pe[j];
  }

  for (int l = 0; l < c.n_layers; ++l) {
    LayerCache<T>& L = m.layers[static_cast<std::size_t>(l)];
    L.x_in = x;
    L.xhat1.resize(nd);
    L.rstd1.resize(static_cast<std::size_t>(n));
    L.h1.resize(nd);
    layer_norm_forward(n, d, x.data(), p[Layout::layer(l, Layout::kLn1G)].data.data(),
                       p[Layout::layer(l, Layout::kLn1B)].data.data(),
                       L.xhat1.data(), L.rstd1.data(), L.h1.data());
    L.q.resize(nd);
    L.k.resize(nd);
    L.v.resize(nd);
    linear_forward(linear_ref(view, c, l, LinearSlot::kQ), n, L.h1.data(), L.q.data(), L.xb_q);
    linear_forward(linear_ref(view, c, l, LinearSlot::kK), n, L.h1.data(), L.k.data(), L.xb_k);
    linear_forward(linear_ref(view, c, l, LinearSlot::kV), n, L.h1.data(), L.v.data(), L.xb_v);
    L.probs.resize(static_cast<std::size_t>(batch.batch) * c.n_heads * batch.seq * batch.seq);
    L.att.resize(nd);
    attention_forward(batch.batch, batch.seq, c.n_heads, c.head_dim(), L.q.data(),
                      L.k.data(), L.v.data(), L.probs.data(), L.att.data());
    std::vector<T> y(nd);
    linear_forward(linear_ref(view, c, l, LinearSlot::kO), n, L.att.data(), y.data(), L.xb_o);
    for (std::size_t i = 0; i < nd; ++i) x[i] += y[i];
    L.x_mid = x;
    L.xhat2.resize(nd);
    L.rstd2.resize(static_cast<std::size_t>(n));
    L.h2.resize(nd);
    layer_norm_forward(n, d, x.data(), p[Layout::layer(l, Layout::kLn2G)].data.data(),
                       p[Layout::layer(l, Layout::kLn2B)].data.data(),
                       L.xhat2.data(), L.rstd2.data(), L.h2.data());
    const std::size_t nf = static_cast<std::size_t>(n) * F;
    L.u.resize(nf);
    L.g.resize(nf);
    linear_forward(linear_ref(view, c, l, LinearSlot::kUp), n, L.h2.data(), L.u.data(), L.xb_up);
    gelu_forward(L.u.data(), L.g.data(), nf);
    linear_forward(linear_ref(view, c, l, LinearSlot::kDown), n, L.g.data(), y.data(), L.xb_down);
    for (std::size_t i = 0; i < nd; ++i) x[i] += y[i];
  }

  m.x_out = x;
  m.xhatf.resize(nd);
  m.rstdf.resize(static_cast<std::size_t>(n));
  m.hf.resize(nd);
  layer_norm_forward(n, d, x.data(), p[Layout::final_norm_g(c)].data.data(),
                     p[Layout::final_norm_b(c)].data.data(), m.xhatf.data(),
                     m.rstdf.data(), m.hf.data());
  m.logits.resize(static_cast<std::size_t>(n) * V);
  const auto& hw = p[Layout::head_w(c)];
  const auto& hb = p[Layout::head_b(c)];
  gemm(false, true, n, V, d, T(1), m.hf.data(), d, hw.data.data(), d, T(0),
       m.logits.data(), V);
  for (int i = 0; i < n; ++i) {
    T* row = m.logits.data() + static_cast<std::size_t>(i) * V;
    for (int j = 0; j < V; ++j) row[j] += hb.data[static_cast<std::size_t>(j)];
  }
  return m.logits;
}

template <typename T>
T Engine<T>::loss(const ViewT<T>& view, const Batch& batch) {
  const auto& logits = forward(view, batch);
  const int V = config_.vocab_size;
  T total = 0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < batch.targets.size(); ++i) {
    const int t = batch.targets[i];
    if (t < 0) continue;
    const T* row = logits.data() + i * V;
    const T mx = *std::max_element(row, row + V);
    T sum = 0;
    for (int j = 0; j < V; ++j) sum += std::exp(row[j] - mx);
    total += std::log(sum) + mx - row[t];
    ++count;
  }
  if (count == 0) throw InputError("batch has no loss-bearing positions");
  return total / static_cast<T>(count);
}

template <typename T>
T Engine<T>::loss_and_grad(const ViewT<T>& view, const Batch& batch,
                           const GradsT<T>& grads) {
  const T value = loss(view, batch);
  const auto& p = *view.base;
  const ModelConfig& c = config_;
  Impl& m = *impl_;
  const int d = c.d_model, F = c.ffn_width, V = c.vocab_size, n = m.n;
  const std::size_t nd = static_cast<std::size_t>(n) * d;

  std::size_t count = 0;
  for (int t : batch.targets) count += t >= 0;
  const T inv_count = T(1) / static_cast<T>(count);

  auto& dlogits = m.dlogits;
  dlogits.assign(static_cast<std::size_t>(n) * V, T(0));
  for (int i = 0; i < n; ++i) {
    const int t = batch.targets[static_cast<std::size_t>(i)];
    if (t < 0) continue;
    const T* row = m.logits.data() + static_cast<std::size_t>(i) * V;
    T* drow = dlogits.data() + static_cast<std::size_t>(i) * V;
    const T mx = *std::max_element(row, row + V);
    T sum = 0;
    for (int j = 0; j < V; ++j) {
      drow[j] = std::exp(row[j] - mx);
      sum += drow[j];
    }
    for (int j = 0; j < V; ++j) drow[j] = drow[j] / sum * inv_count;
    drow[t] -= inv_count;
  }

  ParamSetT<T>* gb = grads.base;
  auto& dh = m.dh;
  dh.assign(nd, T(0));
  const auto& hw = p[Layout::head_w(c)];
  gemm(false, false, n, d, V, T(1), dlogits.data(), V, hw.data.data(), d, T(0),
       dh.data(), d);
  if (gb) {
    gemm(true, false, V, d, n, T(1), dlogits.data(), V, m.hf.data(), d, T(1),
         (*gb)[Layout::head_w(c)].data.data(), d);
    auto& dbh = (*gb)[Layout::head_b(c)].data;
    for (int i = 0; i < n; ++i) {
      const T* drow = dlogits.data() + static_cast<std::size_t>(i) * V;
      for (int j = 0; j < V; ++j) dbh[static_cast<std::size_t>(j)] += drow[j];
    }
  }
  auto& dx = m.dx;
  dx.assign(nd, T(0));
  layer_norm_backward(n, d, m.xhatf.data(), m.rstdf.data(),
                      p[Layout::final_norm_g(c)].data.data(), dh.data(), dx.data(),
                      gb ? (*gb)[Layout::final_norm_g(c)].data.data() : nullptr,
                      gb ? (*gb)[Layout::final_norm_b(c)].data.data() : nullptr);

  auto& dffn = m.dffn;
  auto& datt = m.datt;
  auto& dq = m.dq;
  auto& dk = m.dk;
  auto& dv = m.dv;
  for (int l = c.n_layers - 1; l >= 0; --l) {
    const LayerCache<T>& L = m.layers[static_cast<std::size_t>(l)];
    const std::size_t nf = static_cast<std::size_t>(n) * F;
    // Feed-forward branch: x_out = x_mid + down(gelu(up(ln2(x_mid)))).
    dffn.resize(nf);
    linear_backward(linear_ref(view, c, l, LinearSlot::kDown),
                    linear_grad(grads, l, LinearSlot::kDown), n, L.g.data(),
                    L.xb_down, dx.data(), dffn.data(), false, m.dxb);
    gelu_backward(L.u.data(), dffn.data(), nf);
    dh.resize(nd);
    linear_backward(linear_ref(view, c, l, LinearSlot::kUp),
                    linear_grad(grads, l, LinearSlot::kUp), n, L.h2.data(),
                    L.xb_up, dffn.data(), dh.data(), false, m.dxb);
    layer_norm_backward(n, d, L.xhat2.data(), L.rstd2.data(),
                        p[Layout::layer(l, Layout::kLn2G)].data.data(), dh.data(),
                        dx.data(),
                        gb ? (*gb)[Layout::layer(l, Layout::kLn2G)].data.data() : nullptr,
                        gb ? (*gb)[Layout::layer(l, Layout::kLn2B)].data.data() : nullptr);
    // Attention branch: x_mid = x_in + o(attn(q, k, v)).
    datt.resize(nd);
    linear_backward(linear_ref(view, c, l, LinearSlot::kO),
                    linear_grad(grads, l, LinearSlot::kO), n, L.att.data(),
                    L.xb_o, dx.data(), datt.data(), false, m.dxb);
    dq.resize(nd);
    dk.resize(nd);
    dv.resize(nd);
    attention_backward(m.batch, m.seq, c.n_heads, c.head_dim(), L.q.data(),
                       L.k.data(), L.v.data(), L.probs.data(), datt.data(),
                       dq.data(), dk.data(), dv.data(), m.dtmp);
    linear_backward(linear_ref(view, c, l, LinearSlot::kQ),
                    linear_grad(grads, l, LinearSlot::kQ), n, L.h1.data(),
                    L.xb_q, dq.data(), dh.data(), false, m.dxb);
    linear_backward(linear_ref(view, c, l, LinearSlot::kK),
                    linear_grad(grads, l, LinearSlot::kK), n, L.h1.data(),
                    L.xb_k, dk.data(), dh.data(), true, m.dxb);
    linear_backward(linear_ref(view, c, l, LinearSlot::kV),
                    linear_grad(grads, l, LinearSlot::kV), n, L.h1.data(),
                    L.xb_v, dv.data(), dh.data(), true, m.dxb);
    layer_norm_backward(n, d, L.xhat1.data(), L.rstd1.data(),
                        p[Layout::layer(l, Layout::kLn1G)].data.data(), dh.data(),
                        dx.data(),
                        gb ? (*gb)[Layout::layer(l, Layout::kLn1G)].data.data() : nullptr,
                        gb ? (*gb)[Layout::layer(l, Layout::kLn1B)].data.data() : nullptr);
  }

  for (int i = 0; i < n; ++i) {
    const int id = batch.ids[static_cast<std::size_t>(i)];
    const T* g = dx.data() + static_cast<std::size_t>(i) * d;
    T* sink = nullptr;
    if (id < V) {
      if (gb) sink = (*gb)[Layout::kTokEmb].row(id);
    } else if (grads.extension) {
      sink = grads.extension->row(id - V);
    }
    if (sink) {
      for (int j = 0; j < d; ++j) sink[j] += g[j];
    }
    if (gb) {
      T* pg = (*gb)[Layout::kPosEmb].row(i % m.seq);
      for (int j = 0; j < d; ++j) pg[j] += g[j];
    }
  }
  return value;
}

template class Engine<float>;
template class Engine<double>;

std::vector<std::vector<int>> greedy_decode(
    Engine<float>& engine, const View& view,
    const std::vector<std::vector<int>>& prompts, int n_new, int eos_id) {
  std::vector<std::vector<int>> out(prompts.size());
  std::map<std::size_t, std::vector<std::size_t>> by_length;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    if (prompts[i].empty()) throw InputError("empty prompt");
    by_length[prompts[i].size()].push_back(i);
  }
  const int V = engine.config().vocab_size;
  for (const auto& [len, members] : by_length) {
    const int b = static_cast<int>(members.size());
    std::vector<std::vector<int>> seqs;
    seqs.reserve(members.size());
    for (auto idx : members) seqs.push_back(prompts[idx]);
    std::vector<bool> done(members.size(), false);
    for (int step = 0; step < n_new; ++step) {
      if (std::all_of(done.begin(), done.end(), [](bool x) { return x; })) break;
      Batch batch;
      batch.batch = b;
      batch.seq = static_cast<int>(len) + step;
      batch.ids.reserve(static_cast<std::size_t>(b) * batch.seq);
      for (const auto& s : seqs) batch.ids.insert(batch.ids.end(), s.begin(), s.end());
      batch.targets.assign(batch.ids.size(), -1);
      const auto& logits = engine.forward(view, batch);
      for (int r = 0; r < b; ++r) {
        const float* row =
            logits.data() +
            (static_cast<std::size_t>(r) * batch.seq + batch.seq - 1) * V;
        const int next = static_cast<int>(std::max_element(row, row + V) - row);
        seqs[static_cast<std::size_t>(r)].push_back(next);
        if (done[static_cast<std::size_t>(r)]) continue;
        if (next == eos_id) {
          done[static_cast<std::size_t>(r)] = true;
        } else {
          out[members[static_cast<std::size_t>(r)]].push_back(next);
        }
      }
    }
  }
  return out;
}

}  // namespace skillneo::model
